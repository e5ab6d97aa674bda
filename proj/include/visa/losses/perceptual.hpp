#pragma once

#include "visa/core/nn.hpp"
#include "visa/core/ops.hpp"
#include "visa/core/random.hpp"

#include <vector>

namespace visa {

/// Frozen random-feature extractor backing the perceptual and style proxies.
/// Three stride-2 conv stages with seed-pinned gaussian weights; the weights
/// never train, so the proxies define a fixed metric.
template <typename S>
struct PerceptualFeatures {
    std::vector<MatX<S>> weights;  // im2col kernels, one per stage
    std::vector<int> channels{3, 8, 16, 24};
    int kernel = 3, stride = 2, pad = 1;

    explicit PerceptualFeatures(std::uint64_t seed = 0x9E1975ull) {
        for (size_t l = 0; l + 1 < channels.size(); ++l) {
            Rng rng = Rng::keyed(seed, std::uint64_t(l));
            Index fanIn = Index(kernel) * kernel * channels[l];
            weights.push_back(heInit<S>(fanIn, channels[l + 1], fanIn, rng));
        }
    }

    /// Feature maps at the three scales for an (h*w) x 3 image.
    std::vector<Var<S>> operator()(Tape<S>& t, Var<S> x, int h, int w) const {
        check(x.cols() == 3 && x.rows() == Index(h) * w, "perceptual: expected rgb image rows");
        std::vector<Var<S>> feats;
        for (size_t l = 0; l < weights.size(); ++l) {
            Var<S> cols = im2col(x, h, w, kernel, stride, pad);
            x = silu(matmul(cols, constant(t, weights[l])));
            h = (h + 2 * pad - kernel) / stride + 1;
            w = (w + 2 * pad - kernel) / stride + 1;
            feats.push_back(x);
        }
        return feats;
    }
};

/// Mean squared distance of frozen random-conv features at three scales.
template <typename S>
Var<S> lpipsProxy(Tape<S>& t, const PerceptualFeatures<S>& net, Var<S> x, Var<S> y, int h, int w) {
    check(x.rows() == y.rows() && x.cols() == y.cols(), "lpips_proxy: shape mismatch");
    auto fx = net(t, x, h, w);
    auto fy = net(t, y, h, w);
    Var<S> acc = meanSq(sub(fx[0], fy[0]));
    for (size_t l = 1; l < fx.size(); ++l) acc = add(acc, meanSq(sub(fx[l], fy[l])));
    return scale(acc, S(1) / S(fx.size()));
}

/// Gram matrix of an (n x C) feature map, normalised by n.
template <typename S>
Var<S> gram(Var<S> f) {
    return scale(matmul(transpose(f), f), S(1) / S(f.rows()));
}

/// Mean squared distance of Gram matrices of the frozen features.
template <typename S>
Var<S> styleLoss(Tape<S>& t, const PerceptualFeatures<S>& net, Var<S> x, Var<S> y, int h, int w) {
    check(x.rows() == y.rows() && x.cols() == y.cols(), "style_loss: shape mismatch");
    auto fx = net(t, x, h, w);
    auto fy = net(t, y, h, w);
    Var<S> acc = meanSq(sub(gram(fx[0]), gram(fy[0])));
    for (size_t l = 1; l < fx.size(); ++l)
        acc = add(acc, meanSq(sub(gram(fx[l]), gram(fy[l]))));
    return scale(acc, S(1) / S(fx.size()));
}

}  // namespace visa
