#pragma once

#include "visa/core/nn.hpp"

namespace visa {

/// A feature map on the tape: (h*w) x c activations plus its grid shape.
template <typename S>
struct MapVar {
    Var<S> val;
    int h = 0, w = 0;
    Index c() const { return val.cols(); }
};

/// Coarse patch encoder for the reference image: three strided convolutions,
/// 32x32x3 -> 4x4xC_s. Weights are seed-pinned at construction.
template <typename S>
struct SemanticEncoder {
    int inSize = 32;
    Conv2d<S> c1, c2, c3;

    SemanticEncoder() = default;
    SemanticEncoder(ParamStore<S>& store, const std::string& name, Index cs, Rng& rng)
        : c1(store, name + ".c1", 3, 16, 3, 2, 1, rng),
          c2(store, name + ".c2", 16, 32, 3, 2, 1, rng),
          c3(store, name + ".c3", 32, cs, 3, 2, 1, rng) {}

    MapVar<S> operator()(Tape<S>& t, Var<S> image, int h, int w) const {
        check(image.cols() == 3, "encode_semantic: expected 3-channel input");
        check(h == inSize && w == inSize, "encode_semantic: input must be resized to 32x32");
        Var<S> x = silu(c1(t, image, h, w));
        int h1 = c1.outDim(h), w1 = c1.outDim(w);
        x = silu(c2(t, x, h1, w1));
        int h2 = c2.outDim(h1), w2 = c2.outDim(w1);
        x = c3(t, x, h2, w2);
        return {x, c3.outDim(h2), c3.outDim(w2)};
    }
};

/// Detail path: full-resolution input, one map per stride-2 stage, finest
/// first. 64x64x3 -> {32^2 x c0, 16^2 x c1, 8^2 x c2}.
template <typename S>
struct LowLevelEncoder {
    std::vector<Conv2d<S>> convs;

    LowLevelEncoder() = default;
    LowLevelEncoder(ParamStore<S>& store, const std::string& name,
                    const std::vector<Index>& channels, Rng& rng) {
        Index cin = 3;
        for (size_t l = 0; l < channels.size(); ++l) {
            convs.emplace_back(store, name + ".c" + std::to_string(l), cin, channels[l], 3, 2, 1,
                               rng);
            cin = channels[l];
        }
    }

    std::vector<MapVar<S>> operator()(Tape<S>& t, Var<S> image, int h, int w) const {
        check(image.cols() == 3, "encode_lowlevel: expected 3-channel input");
        std::vector<MapVar<S>> maps;
        Var<S> x = image;
        for (const auto& conv : convs) {
            x = silu(conv(t, x, h, w));
            h = conv.outDim(h);
            w = conv.outDim(w);
            maps.push_back({x, h, w});
        }
        return maps;
    }
};

/// Merges a multi-scale stack into one map at the finest resolution: each
/// scale passes through a 1x1 lateral projection to C_v, coarser levels are
/// nearest-upsampled and summed. A single-entry stack reduces to its lateral
/// projection.
template <typename S>
struct PyramidFuser {
    std::vector<Conv2d<S>> laterals;  // one per configured scale, finest first

    PyramidFuser() = default;
    PyramidFuser(ParamStore<S>& store, const std::string& name, const std::vector<Index>& channels,
                 Index cv, Rng& rng) {
        for (size_t l = 0; l < channels.size(); ++l)
            laterals.emplace_back(store, name + ".lat" + std::to_string(l), channels[l], cv, 1, 1,
                                  0, rng);
    }

    MapVar<S> operator()(Tape<S>& t, const std::vector<MapVar<S>>& maps) const {
        check(!maps.empty(), "pyramid_fuse: empty scale list");
        check(maps.size() == laterals.size(), "pyramid_fuse: scale count mismatch");
        // Identify coarse->fine processing order regardless of input order.
        std::vector<size_t> order(maps.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](size_t a, size_t b) { return maps[a].h < maps[b].h; });
        for (size_t i = 0; i + 1 < order.size(); ++i)
            check(maps[order[i]].h < maps[order[i + 1]].h && maps[order[i]].w < maps[order[i + 1]].w,
                  "pyramid_fuse: resolutions must be strictly ordered");

        Var<S> acc;
        int h = 0, w = 0;
        for (size_t k = 0; k < order.size(); ++k) {
            const MapVar<S>& m = maps[order[k]];
            Var<S> proj = laterals[order[k]](t, m.val, m.h, m.w);
            if (k == 0) {
                acc = proj;
                h = m.h;
                w = m.w;
                continue;
            }
            while (h < m.h) {
                acc = upsample2xNearest(acc, h, w);
                h *= 2;
                w *= 2;
            }
            check(h == m.h && w == m.w, "pyramid_fuse: scales must differ by powers of two");
            acc = add(acc, proj);
        }
        return {acc, h, w};
    }
};

}  // namespace visa
