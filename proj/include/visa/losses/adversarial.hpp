#pragma once

#include "visa/core/serialize.hpp"
#include "visa/losses/objectives.hpp"
#include "visa/shader/shader.hpp"

#include <vector>

namespace visa {

/// Conditional video discriminator: a frozen snapshot of the shader trunk
/// (plus the pixel encoder for the reference pathway) feeding a small
/// trainable classification head. The backbone lives in its own store with
/// every parameter frozen, so discriminator updates can only move the head.
template <typename S>
struct Discriminator {
    ShaderConfig cfg;
    ParamStore<S> frozenStore;
    ShaderNet<S> backbone;
    PixelVae<S> vae;
    Linear<S> head1, head2;  // trainable; registered in the caller's store

    Discriminator() = default;
    Discriminator(ParamStore<S>& store, const ShaderConfig& c, Rng& rng) : cfg(c) {
        backbone = ShaderNet<S>(frozenStore, c, rng);
        vae = PixelVae<S>(frozenStore, c.cz, 8 * c.latentH, rng);
        freezeBackbone();
        head1 = Linear<S>(store, "disc.head.fc1", c.width, c.width, rng);
        head2 = Linear<S>(store, "disc.head.out", c.width, 1, rng);
    }

    void freezeBackbone() {
        for (auto& p : frozenStore.all()) p.frozen = true;
    }

    /// Copies matching-name parameters from a live store (shader + vae) into
    /// the frozen backbone; used to snapshot the warmed-up generator.
    void adoptBackbone(ParamStore<S>& src) {
        for (auto& p : frozenStore.all()) {
            Parameter<S>* q = src.find(p.name);
            if (q) {
                check(q->value.rows() == p.value.rows() && q->value.cols() == p.value.cols(),
                      "discriminator: backbone shape mismatch for " + p.name);
                p.value = q->value;
            }
        }
        freezeBackbone();
    }

    std::uint64_t backboneChecksum() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& p : frozenStore.all()) {
            std::uint64_t c = checksum(p.value);
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

    void setHeadFrozen(bool frozen) {
        head1.w->frozen = frozen;
        head1.b->frozen = frozen;
        head2.w->frozen = frozen;
        head2.b->frozen = frozen;
    }

    /// Scalar logit (1x1) for a latent video conditioned on a reference
    /// image. The reference enters through the frozen encoder and seeds the
    /// backbone cache; video tokens attend to it, are mean-pooled and scored.
    Var<S> operator()(Tape<S>& t, const std::vector<Var<S>>& videoLatents, Var<S> refImage) const {
        check(!videoLatents.empty(), "discriminate: empty video");
        Var<S> refLatent = vae.encode(t, refImage);
        KVCache<S> cache;
        backbone.encodeReference(t, refLatent, cache);

        std::vector<Var<S>> zeroCond;
        for (size_t f = 0; f < videoLatents.size(); ++f)
            zeroCond.push_back(constant(t, MatX<S>::Zero(cfg.pixelsPerFrame(), cfg.cf)));
        std::vector<double> pos;
        Var<S> x = backbone.embedChunk(t, videoLatents, zeroCond, 0.0,
                                       double(cache.positions.back() + 1.0), pos);
        x = backbone.trunk(t, x, &cache, pos, nullptr);

        MatX<S> poolW = MatX<S>::Constant(1, x.rows(), S(1) / S(x.rows()));
        Var<S> pooled = matmul(constant(t, poolW), x);
        return head2(t, silu(head1(t, pooled)));
    }
};

namespace detail {
template <typename S>
struct HeadFreezeGuard {
    Discriminator<S>& d;
    explicit HeadFreezeGuard(Discriminator<S>& dd) : d(dd) { d.setHeadFrozen(true); }
    ~HeadFreezeGuard() { d.setHeadFrozen(false); }
};
}  // namespace detail

/// Relativistic term -log sigma(a - b) = softplus(b - a).
template <typename S>
Var<S> relativisticTerm(Var<S> a, Var<S> b) {
    return softplus(scale(sub(a, b), S(-1)));
}

/// Discriminator objective: -log sigma(D(real) - D(fake)) plus the
/// approximate R1/R2 logit-variance penalty. Both videos enter detached, so
/// no gradient can reach the generator; noise for the penalty is drawn from
/// the supplied stream scaled by sigmaReg (quadratically vanishing as the
/// noise shrinks).
template <typename S>
LossBreakdown<S> dLoss(Tape<S>& t, Discriminator<S>& d, const std::vector<Var<S>>& realVideo,
                       const std::vector<Var<S>>& fakeVideo, Var<S> refImage,
                       const LossWeights& w, Rng& rng) {
    w.validate();
    auto detachAll = [](const std::vector<Var<S>>& v) {
        std::vector<Var<S>> out;
        for (auto& x : v) out.push_back(detach(x));
        return out;
    };
    auto real = detachAll(realVideo);
    auto fake = detachAll(fakeVideo);
    Var<S> ref = detach(refImage);

    Var<S> dr = d(t, real, ref);
    Var<S> df = d(t, fake, ref);
    Var<S> rel = relativisticTerm(dr, df);

    auto perturb = [&](const std::vector<Var<S>>& v) {
        std::vector<Var<S>> out;
        for (auto& x : v) {
            MatX<S> eps = rng.template gaussian<S>(x.rows(), x.cols());
            out.push_back(add(x, constant(t, MatX<S>(eps * S(w.sigmaReg)))));
        }
        return out;
    };
    Var<S> drP = d(t, perturb(real), ref);
    Var<S> dfP = d(t, perturb(fake), ref);
    Var<S> regTerm = add(square(sub(drP, dr)), square(sub(dfP, df)));

    Var<S> total = add(rel, scale(regTerm, S(w.reg)));
    LossBreakdown<S> out;
    out.total = total;
    out.parts = {{"relativistic", double(rel.v()(0, 0))},
                 {"r1r2", double(regTerm.v()(0, 0))},
                 {"total", double(total.v()(0, 0))}};
    return out;
}

/// Generator objective: -log sigma(D(fake) - D(real)). The head is frozen
/// for the duration of the pass and the real branch is detached, so the only
/// gradient path runs through the fake video into the generator.
template <typename S>
LossBreakdown<S> gLoss(Tape<S>& t, Discriminator<S>& d, const std::vector<Var<S>>& realVideo,
                       const std::vector<Var<S>>& fakeVideo, Var<S> refImage) {
    detail::HeadFreezeGuard<S> guard(d);
    std::vector<Var<S>> real;
    for (auto& x : realVideo) real.push_back(detach(x));
    Var<S> ref = detach(refImage);

    Var<S> df = d(t, fakeVideo, ref);
    Var<S> dr = d(t, real, ref);
    Var<S> rel = relativisticTerm(df, dr);

    LossBreakdown<S> out;
    out.total = rel;
    out.parts = {{"relativistic", double(rel.v()(0, 0))}, {"total", double(rel.v()(0, 0))}};
    return out;
}

}  // namespace visa
