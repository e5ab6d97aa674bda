#pragma once

#include "visa/core/image.hpp"
#include "visa/features/encoders.hpp"
#include "visa/features/lift.hpp"

namespace visa {

/// Per-vertex token: concat(semantic sample, detail sample, learned prior
/// embedding), in that order. Pure concatenation, so column slices recover
/// the inputs exactly.
template <typename S>
Var<S> buildTokens(Var<S> semLifted, Var<S> visLifted, Var<S> prior) {
    check(semLifted.rows() == visLifted.rows() && visLifted.rows() == prior.rows(),
          "build_tokens: leading dimensions must match");
    return concatCols(std::vector<Var<S>>{semLifted, visLifted, prior});
}

struct FeatureConfig {
    Index cs = 64;                          // semantic width
    Index cv = 64;                          // fused detail width
    Index d = 32;                           // prior embedding width
    int semInput = 32;                      // semantic encoder input size
    std::vector<Index> lowChannels = {24, 32, 48};

    Index tokenWidth() const { return cs + cv + d; }
};

/// One-shot feature stack: encodes the reference image, lifts both maps onto
/// the posed template vertices, and fuses with the shared prior table.
template <typename S>
struct FeatureExtractor {
    FeatureConfig cfg;
    SemanticEncoder<S> sem;
    LowLevelEncoder<S> low;
    PyramidFuser<S> fuse;
    Parameter<S>* prior = nullptr;   // N_v x d, shared across subjects
    Parameter<S>* oovSem = nullptr;  // 1 x C_s
    Parameter<S>* oovVis = nullptr;  // 1 x C_v

    FeatureExtractor() = default;
    FeatureExtractor(ParamStore<S>& store, const FeatureConfig& cfg_, Index nVerts, Rng& rng)
        : cfg(cfg_),
          sem(store, "feat.sem", cfg_.cs, rng),
          low(store, "feat.low", cfg_.lowChannels, rng),
          fuse(store, "feat.fuse", cfg_.lowChannels, cfg_.cv, rng) {
        prior = &store.add("feat.prior", rng.gaussian<S>(nVerts, cfg_.d, 0.02));
        oovSem = &store.add("feat.oov_sem", MatX<S>::Zero(1, cfg_.cs));
        oovVis = &store.add("feat.oov_vis", MatX<S>::Zero(1, cfg_.cv));
    }

    struct Output {
        Var<S> tokens;    // N_v x (C_s + C_v + d)
        MapVar<S> semMap; // 4x4 x C_s
        MapVar<S> visMap; // finest-scale fused map
    };

    /// `reference` is the subject image in [0,1]; `posedVerts` the skinned
    /// template vertices on the tape (reference pose).
    Output run(Tape<S>& t, const Image<S>& reference, Var<S> posedVerts,
               const Camera<S>& cam) const {
        check(reference.c == 3, "feature extraction expects an RGB reference");
        Image<S> semIn = resizeBilinear(reference, cfg.semInput, cfg.semInput);
        Var<S> semImg = constant(t, semIn.data);
        Var<S> lowImg = constant(t, reference.data);

        Output out;
        out.semMap = sem(t, semImg, cfg.semInput, cfg.semInput);
        auto scales = low(t, lowImg, reference.h, reference.w);
        out.visMap = fuse(t, scales);

        Var<S> semLift = liftFeatures(out.semMap.val, out.semMap.h, out.semMap.w, reference.h,
                                      reference.w, posedVerts, cam, leaf(t, *oovSem));
        Var<S> visLift = liftFeatures(out.visMap.val, out.visMap.h, out.visMap.w, reference.h,
                                      reference.w, posedVerts, cam, leaf(t, *oovVis));
        out.tokens = buildTokens(semLift, visLift, leaf(t, *prior));
        return out;
    }
};

}  // namespace visa
