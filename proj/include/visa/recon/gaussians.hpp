#pragma once

#include "visa/core/nn.hpp"
#include "visa/geometry/body_template.hpp"

namespace visa {

/// Canonical splat cloud on the tape, one Gaussian per template vertex
/// (binding i -> vertex i). All attribute constraints are baked into the
/// head activations: positions bounded around the binding vertex, unit
/// rotations, scales in (0, s_max), opacities and colors squashed.
template <typename S>
struct AvatarVars {
    Var<S> positions;  // N x 3, canonical centers (m)
    Var<S> rotations;  // N x 4, unit quaternions
    Var<S> logScales;  // N x 3, exp() gives the axis scales
    Var<S> opacities;  // N x 1, in (0,1)
    Var<S> colors;     // N x 3, in (0,1)
    Var<S> features;   // N x C_f, unconstrained rendering features

    Index count() const { return positions.rows(); }
};

struct ReconConfig {
    Index tokenWidth = 160;
    Index width = 128;
    int layers = 5;
    int heads = 4;
    Index cf = 16;         // rendering feature width
    double rMax = 0.05;    // offset bound (m)
    double sMax = 0.04;    // scale upper bound (m)
};

/// Multi-head self-attention over vertex tokens. No positional encoding:
/// vertex identity comes from the prior table, which keeps the map
/// permutation-equivariant.
template <typename S>
struct SelfAttention {
    int heads = 4;
    Linear<S> q, k, v, out;

    SelfAttention() = default;
    SelfAttention(ParamStore<S>& store, const std::string& name, Index width, int heads_, Rng& rng)
        : heads(heads_),
          q(store, name + ".q", width, width, rng),
          k(store, name + ".k", width, width, rng),
          v(store, name + ".v", width, width, rng),
          out(store, name + ".o", width, width, rng) {}

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        Index width = x.cols();
        Index dh = width / heads;
        Var<S> qs = q(t, x), ks = k(t, x), vs = v(t, x);
        std::vector<Var<S>> outs;
        for (int h = 0; h < heads; ++h) {
            Var<S> qh = sliceCols(qs, h * dh, dh);
            Var<S> kh = sliceCols(ks, h * dh, dh);
            Var<S> vh = sliceCols(vs, h * dh, dh);
            Var<S> att = softmaxRows(scale(matmul(qh, transpose(kh)), S(1.0 / std::sqrt(double(dh)))));
            outs.push_back(matmul(att, vh));
        }
        return out(t, concatCols(outs));
    }
};

template <typename S>
struct TransformerBlock {
    LayerNorm<S> ln1, ln2;
    SelfAttention<S> attn;
    Linear<S> fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<S>& store, const std::string& name, Index width, int heads,
                     Rng& rng)
        : ln1(store, name + ".ln1", width),
          ln2(store, name + ".ln2", width),
          attn(store, name + ".attn", width, heads, rng),
          fc1(store, name + ".fc1", width, 2 * width, rng),
          fc2(store, name + ".fc2", 2 * width, width, rng) {}

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        x = add(x, attn(t, ln1(t, x)));
        return add(x, fc2(t, silu(fc1(t, ln2(t, x)))));
    }
};

/// Token set -> canonical Gaussian avatar.
template <typename S>
struct ReconNet {
    ReconConfig cfg;
    Linear<S> inProj;
    std::vector<TransformerBlock<S>> blocks;
    LayerNorm<S> lnOut;
    Linear<S> headOffset, headRot, headScale, headOpacity, headColor, headFeature;

    ReconNet() = default;
    ReconNet(ParamStore<S>& store, const ReconConfig& cfg_, Rng& rng)
        : cfg(cfg_), inProj(store, "recon.in", cfg_.tokenWidth, cfg_.width, rng) {
        for (int l = 0; l < cfg.layers; ++l)
            blocks.emplace_back(store, "recon.blk" + std::to_string(l), cfg.width, cfg.heads, rng);
        lnOut = LayerNorm<S>(store, "recon.ln_out", cfg.width);
        headOffset = Linear<S>(store, "recon.head.offset", cfg.width, 3, rng);
        headRot = Linear<S>(store, "recon.head.rot", cfg.width, 4, rng);
        headScale = Linear<S>(store, "recon.head.scale", cfg.width, 3, rng);
        headOpacity = Linear<S>(store, "recon.head.opacity", cfg.width, 1, rng);
        headColor = Linear<S>(store, "recon.head.color", cfg.width, 3, rng);
        headFeature = Linear<S>(store, "recon.head.feature", cfg.width, cfg.cf, rng);
        // Identity-rotation start; scales begin around 0.2*sMax; opacities high.
        headRot.b->value(0, 0) = S(4);
        headScale.b->value.setConstant(S(-1.386));
        headOpacity.b->value.setConstant(S(2));
    }

    /// `restVertices` are the binding positions (template rest pose), kept
    /// off-tape: gradients flow into the offsets only.
    AvatarVars<S> operator()(Tape<S>& t, Var<S> tokens, const MatX<S>& restVertices) const {
        check(tokens.cols() == cfg.tokenWidth, "reconstruct: token width mismatch");
        check(tokens.rows() == restVertices.rows(), "reconstruct: token/vertex count mismatch");
        Var<S> x = inProj(t, tokens);
        for (const auto& blk : blocks) x = blk(t, x);
        x = lnOut(t, x);

        AvatarVars<S> av;
        av.positions =
            add(constant(t, restVertices), scale(tanhv(headOffset(t, x)), S(cfg.rMax)));
        av.rotations = l2normalizeRows(headRot(t, x));
        // log s = log(sMax) - softplus(-raw), so exp(log s) = sMax * sigmoid(raw).
        av.logScales = addScalar(scale(softplus(scale(headScale(t, x), S(-1))), S(-1)),
                                 S(std::log(cfg.sMax)));
        av.opacities = sigmoid(headOpacity(t, x));
        av.colors = sigmoid(headColor(t, x));
        av.features = headFeature(t, x);
        return av;
    }
};

}  // namespace visa
