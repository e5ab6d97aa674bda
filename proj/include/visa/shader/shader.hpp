#pragma once

#include "visa/core/nn.hpp"
#include "visa/core/ops.hpp"
#include "visa/core/random.hpp"
#include "visa/shader/vae.hpp"

#include <cmath>
#include <vector>

namespace visa {

/// Few-step denoising schedule. Timesteps are in (0, 1000], strictly
/// descending; sigma(t) = t / 1000 so the first step starts from pure noise.
struct DenoiseSchedule {
    std::vector<int> steps{1000, 750, 500, 250};

    void validate() const {
        check(!steps.empty(), "schedule: empty");
        check(steps.front() == 1000, "schedule: must start at t = 1000 (pure noise)");
        for (size_t i = 0; i < steps.size(); ++i) {
            check(steps[i] > 0 && steps[i] <= 1000, "schedule: timestep out of range");
            if (i) check(steps[i] < steps[i - 1], "schedule: timesteps must strictly descend");
        }
    }
    double sigma(int t) const { return double(t) / 1000.0; }
};

struct ShaderConfig {
    Index cz = 8;       // latent channels
    Index cf = 8;       // condition channels; must equal cz when rgb-cond is used
    int latentH = 8;
    int latentW = 8;
    int patch = 2;      // spatial patch edge over the latent grid
    Index width = 128;
    int layers = 4;
    int heads = 4;
    int chunkFrames = 3;
    DenoiseSchedule schedule;

    Index tokensPerFrame() const {
        return Index(latentH / patch) * Index(latentW / patch);
    }
    Index patchDimIn() const { return Index(patch) * patch * (cz + cf); }
    Index patchDimOut() const { return Index(patch) * patch * cz; }
    Index pixelsPerFrame() const { return Index(latentH) * latentW; }

    void validate() const {
        check(latentH % patch == 0 && latentW % patch == 0, "shader: patch must divide latent grid");
        check(width % heads == 0, "shader: heads must divide width");
        check((width / heads) % 2 == 0, "shader: head dim must be even for rotary pairs");
        check(cz > 0 && cf > 0 && layers > 0 && chunkFrames > 0, "shader: bad sizes");
        schedule.validate();
    }
};

/// Per-layer key/value rows for all committed tokens. The first refSpan rows
/// belong to the reference frame and are never evicted or rewritten.
template <typename S>
struct KVCache {
    struct Layer {
        MatX<S> k, v;
    };
    std::vector<Layer> layers;
    std::vector<double> positions;  // rotary position of each cached token
    Index refSpan = 0;

    Index length() const { return layers.empty() ? 0 : layers.front().k.rows(); }

    void append(const std::vector<MatX<S>>& k, const std::vector<MatX<S>>& v,
                const std::vector<double>& pos) {
        check(k.size() == layers.size() && v.size() == layers.size(),
              "kv-cache: layer count mismatch");
        for (size_t l = 0; l < layers.size(); ++l) {
            MatX<S> nk(layers[l].k.rows() + k[l].rows(), k[l].cols());
            nk << layers[l].k, k[l];
            layers[l].k = std::move(nk);
            MatX<S> nv(layers[l].v.rows() + v[l].rows(), v[l].cols());
            nv << layers[l].v, v[l];
            layers[l].v = std::move(nv);
        }
        positions.insert(positions.end(), pos.begin(), pos.end());
    }
};

namespace detail {

/// Pre-norm transformer block attending to [cache tokens, current tokens].
/// Keys are stored rotated at their own position, so cached entries combine
/// with fresh queries through the relative-phase property.
template <typename S>
struct ShaderBlock {
    LayerNorm<S> ln1, ln2;
    Linear<S> wq, wk, wv, wo, fc1, fc2;
    int heads = 4;

    ShaderBlock() = default;
    ShaderBlock(ParamStore<S>& store, const std::string& prefix, Index width, int heads_, Rng& rng)
        : ln1(store, prefix + ".ln1", width),
          ln2(store, prefix + ".ln2", width),
          wq(store, prefix + ".attn.q", width, width, rng),
          wk(store, prefix + ".attn.k", width, width, rng),
          wv(store, prefix + ".attn.v", width, width, rng),
          wo(store, prefix + ".attn.o", width, width, rng),
          fc1(store, prefix + ".fc1", width, 4 * width, rng),
          fc2(store, prefix + ".fc2", 4 * width, width, rng),
          heads(heads_) {}

    Var<S> operator()(Tape<S>& t, Var<S> x, const typename KVCache<S>::Layer* cache,
                      const std::vector<double>& cachePos, const std::vector<double>& pos,
                      MatX<S>* kOut, MatX<S>* vOut) const {
        Index width = x.cols();
        Index dh = width / heads;
        Var<S> h = ln1(t, x);
        Var<S> q = ropeRotate(wq(t, h), pos);
        Var<S> kCur = ropeRotate(wk(t, h), pos);
        Var<S> vCur = wv(t, h);
        if (kOut) *kOut = kCur.v();
        if (vOut) *vOut = vCur.v();

        Var<S> kAll = kCur, vAll = vCur;
        if (cache && cache->k.rows() > 0) {
            kAll = concatRows<S>({constant(t, cache->k), kCur});
            vAll = concatRows<S>({constant(t, cache->v), vCur});
        }
        std::vector<Var<S>> headOut;
        S inv = S(1) / S(std::sqrt(double(dh)));
        for (int hh = 0; hh < heads; ++hh) {
            Var<S> qh = sliceCols(q, hh * dh, dh);
            Var<S> kh = sliceCols(kAll, hh * dh, dh);
            Var<S> vh = sliceCols(vAll, hh * dh, dh);
            Var<S> att = softmaxRows(scale(matmul(qh, transpose(kh)), inv));
            headOut.push_back(matmul(att, vh));
        }
        x = add(x, wo(t, concatCols(headOut)));
        Var<S> m = ln2(t, x);
        return add(x, fc2(t, silu(fc1(t, m))));
    }
};

}  // namespace detail

/// Captured per-layer K/V values of one forward pass, ready to commit.
template <typename S>
struct ChunkKV {
    std::vector<MatX<S>> k, v;
    std::vector<double> positions;
};

/// Causal autoregressive latent video shader. Chunks of latent frames are
/// denoised jointly with full attention inside the chunk and attention into
/// the cache for everything committed before (block-causal at chunk
/// granularity). Conditioning enters by channel concatenation at the input
/// projection.
template <typename S>
struct ShaderNet {
    ShaderConfig cfg;
    Linear<S> embed;           // patch projection over concat(latent, cond)
    Linear<S> tstep1, tstep2;  // timestep embedding mlp
    std::vector<detail::ShaderBlock<S>> blocks;
    LayerNorm<S> lnOut;
    Linear<S> out;

    ShaderNet() = default;
    ShaderNet(ParamStore<S>& store, const ShaderConfig& c, Rng& rng) : cfg(c) {
        cfg.validate();
        embed = Linear<S>(store, "shader.embed", cfg.patchDimIn(), cfg.width, rng);
        tstep1 = Linear<S>(store, "shader.tstep1", cfg.width, cfg.width, rng);
        tstep2 = Linear<S>(store, "shader.tstep2", cfg.width, cfg.width, rng);
        for (int l = 0; l < cfg.layers; ++l)
            blocks.emplace_back(store, "shader.blk" + std::to_string(l), cfg.width, cfg.heads, rng);
        lnOut = LayerNorm<S>(store, "shader.ln_out", cfg.width);
        out = Linear<S>(store, "shader.out", cfg.width, cfg.patchDimOut(), rng);
    }

    /// Row indices that flatten patch-major token layout back to pixel rows.
    std::vector<Index> patchIndex() const {
        std::vector<Index> idx;
        int hp = cfg.latentH / cfg.patch, wp = cfg.latentW / cfg.patch;
        for (int py = 0; py < hp; ++py)
            for (int px = 0; px < wp; ++px)
                for (int dy = 0; dy < cfg.patch; ++dy)
                    for (int dx = 0; dx < cfg.patch; ++dx)
                        idx.push_back(Index(py * cfg.patch + dy) * cfg.latentW +
                                      px * cfg.patch + dx);
        return idx;
    }

    static std::vector<Index> inverse(const std::vector<Index>& p) {
        std::vector<Index> inv(p.size());
        for (size_t i = 0; i < p.size(); ++i) inv[p[i]] = Index(i);
        return inv;
    }

    /// (pixelsPerFrame x C) frame -> (tokensPerFrame x patch^2 C).
    Var<S> patchify(Var<S> frame) const {
        return reshapeRowMajor(gatherRows(frame, patchIndex()), cfg.tokensPerFrame(),
                               frame.cols() * cfg.patch * cfg.patch);
    }

    /// Inverse of patchify for the cz-channel output.
    Var<S> unpatchify(Var<S> tokens) const {
        Var<S> rows = reshapeRowMajor(tokens, cfg.pixelsPerFrame(), cfg.cz);
        return gatherRows(rows, inverse(patchIndex()));
    }

    Var<S> timestepEmbedding(Tape<S>& t, double sigma) const {
        RowX<S> e(cfg.width);
        for (Index i = 0; i < cfg.width / 2; ++i) {
            double freq = std::pow(1000.0, -2.0 * double(i) / double(cfg.width));
            e(2 * i) = S(std::sin(sigma * 1000.0 * freq));
            e(2 * i + 1) = S(std::cos(sigma * 1000.0 * freq));
        }
        return tstep2(t, silu(tstep1(t, constant(t, MatX<S>(e)))));
    }

    /// Embeds one chunk: per frame concat(latent, cond) channels, patchify,
    /// project, add the timestep embedding. Returns tokens plus their rotary
    /// positions starting at startPos.
    Var<S> embedChunk(Tape<S>& t, const std::vector<Var<S>>& latents,
                      const std::vector<Var<S>>& cond, double sigma, double startPos,
                      std::vector<double>& posOut) const {
        check(latents.size() == cond.size() && !latents.empty(), "embed: frame count mismatch");
        std::vector<Var<S>> tokens;
        posOut.clear();
        for (size_t f = 0; f < latents.size(); ++f) {
            check(latents[f].rows() == cfg.pixelsPerFrame() && latents[f].cols() == cfg.cz,
                  "embed: latent frame shape mismatch");
            check(cond[f].rows() == cfg.pixelsPerFrame() && cond[f].cols() == cfg.cf,
                  "embed: condition frame shape mismatch");
            tokens.push_back(patchify(concatCols<S>({latents[f], cond[f]})));
            for (Index j = 0; j < cfg.tokensPerFrame(); ++j)
                posOut.push_back(startPos + double(f) * double(cfg.tokensPerFrame()) + double(j));
        }
        Var<S> x = embed(t, concatRows(tokens));
        return addRowvec(x, timestepEmbedding(t, sigma));
    }

    Var<S> trunk(Tape<S>& t, Var<S> x, const KVCache<S>* cache,
                 const std::vector<double>& pos, ChunkKV<S>* capture) const {
        if (capture) {
            capture->k.resize(blocks.size());
            capture->v.resize(blocks.size());
            capture->positions = pos;
        }
        static const std::vector<double> kNoPos;
        for (size_t l = 0; l < blocks.size(); ++l) {
            const typename KVCache<S>::Layer* cl =
                (cache && !cache->layers.empty()) ? &cache->layers[l] : nullptr;
            x = blocks[l](t, x, cl, cache ? cache->positions : kNoPos, pos,
                          capture ? &capture->k[l] : nullptr, capture ? &capture->v[l] : nullptr);
        }
        return x;
    }

    /// One denoising pass over a chunk: predicts the clean latents for every
    /// frame of the chunk given the cache of committed history.
    std::vector<Var<S>> denoiseChunk(Tape<S>& t, const std::vector<Var<S>>& noisy,
                                     const std::vector<Var<S>>& cond, int timestep,
                                     const KVCache<S>& cache, ChunkKV<S>* capture = nullptr) const {
        double startPos = cache.positions.empty() ? 0.0 : cache.positions.back() + 1.0;
        std::vector<double> pos;
        Var<S> x = embedChunk(t, noisy, cond, cfg.schedule.sigma(timestep), startPos, pos);
        x = trunk(t, x, &cache, pos, capture);
        Var<S> y = out(t, lnOut(t, x));
        std::vector<Var<S>> frames;
        for (size_t f = 0; f < noisy.size(); ++f)
            frames.push_back(unpatchify(sliceRows(y, Index(f) * cfg.tokensPerFrame(),
                                                  cfg.tokensPerFrame())));
        return frames;
    }

    /// Seeds the cache with the reference latent frame: a t = 0 pass with a
    /// zero condition at positions [0, tokensPerFrame). The cache length
    /// afterwards equals the reference token span and rope positions of all
    /// later tokens are shifted past it.
    void encodeReference(Tape<S>& t, Var<S> refLatent, KVCache<S>& cache) const {
        check(cache.length() == 0, "encode_reference: cache must be empty");
        Var<S> zeroCond = constant(t, MatX<S>::Zero(cfg.pixelsPerFrame(), cfg.cf));
        std::vector<double> pos;
        Var<S> x = embedChunk(t, {detach(refLatent)}, {zeroCond}, 0.0, 0.0, pos);
        ChunkKV<S> kv;
        trunk(t, x, nullptr, pos, &kv);
        cache.layers.resize(blocks.size());
        cache.append(kv.k, kv.v, pos);
        cache.refSpan = cfg.tokensPerFrame();
    }

    /// Commits a finished chunk: re-embeds the (detached) clean latents at
    /// t = 0 and appends the resulting K/V rows to the cache. History never
    /// carries gradients.
    void commitChunk(Tape<S>& t, const std::vector<Var<S>>& cleanLatents,
                     const std::vector<Var<S>>& cond, KVCache<S>& cache) const {
        check(cache.refSpan > 0, "commit: cache must hold the reference span first");
        std::vector<Var<S>> lat, cnd;
        for (auto& v : cleanLatents) lat.push_back(detach(v));
        for (auto& v : cond) cnd.push_back(detach(v));
        double startPos = cache.positions.back() + 1.0;
        std::vector<double> pos;
        Var<S> x = embedChunk(t, lat, cnd, 0.0, startPos, pos);
        ChunkKV<S> kv;
        trunk(t, x, &cache, pos, &kv);
        cache.append(kv.k, kv.v, pos);
    }
};

struct RolloutOptions {
    bool training = false;    // sample one grad-carrying step per chunk
    std::uint64_t seed = 0;
    std::uint64_t clipId = 0;
    bool decodeFrames = true;
    bool rebuildCache = false;  // paranoia mode: rebuild the cache from
                                // committed inputs before every chunk
};

template <typename S>
struct RolloutResult {
    std::vector<std::vector<Var<S>>> chunkLatents;  // clean latents per chunk
    std::vector<Var<S>> frames;                     // decoded rgb per latent frame
    std::vector<int> gradStep;                      // sampled step index per chunk (training)
    KVCache<S> cache;
};

/// Runs the causal shader over a condition sequence. Frames are grouped into
/// chunks; each chunk starts from pure noise and is denoised through the
/// few-step schedule. In training mode one schedule step per chunk is drawn
/// uniformly and only that step carries gradients; earlier steps and all
/// commits run on detached values. Noise is keyed by (seed, clip, chunk,
/// step) so rollouts are bit-reproducible.
template <typename S>
RolloutResult<S> rollout(Tape<S>& t, const ShaderNet<S>& net, const PixelVae<S>& vae,
                         Var<S> refLatent, const std::vector<Var<S>>& cond,
                         const RolloutOptions& opt) {
    const ShaderConfig& cfg = net.cfg;
    check(!cond.empty() && cond.size() % size_t(cfg.chunkFrames) == 0,
          "rollout: condition length must be a positive multiple of the chunk size");
    size_t nChunks = cond.size() / size_t(cfg.chunkFrames);
    const std::vector<int>& steps = cfg.schedule.steps;

    RolloutResult<S> res;
    net.encodeReference(t, refLatent, res.cache);

    // Inputs of every committed chunk, kept for optional cache rebuilds.
    std::vector<std::vector<Var<S>>> committedLat, committedCond;

    for (size_t c = 0; c < nChunks; ++c) {
        if (opt.rebuildCache) {
            KVCache<S> fresh;
            net.encodeReference(t, refLatent, fresh);
            for (size_t b = 0; b < committedLat.size(); ++b)
                net.commitChunk(t, committedLat[b], committedCond[b], fresh);
            res.cache = std::move(fresh);
        }
        std::vector<Var<S>> condChunk(cond.begin() + long(c) * cfg.chunkFrames,
                                      cond.begin() + long(c + 1) * cfg.chunkFrames);
        std::vector<Var<S>> condDetached;
        for (auto& v : condChunk) condDetached.push_back(detach(v));

        int gradStep = -1;
        if (opt.training) {
            Rng pick = Rng::keyed(opt.seed, opt.clipId, std::uint64_t(c), 0xFACEu);
            gradStep = int(pick.integer(0, int(steps.size()) - 1));
        }
        res.gradStep.push_back(gradStep);

        // sigma = 1 start: the chunk is pure noise.
        std::vector<Var<S>> x;
        {
            Rng rng = Rng::keyed(opt.seed, opt.clipId, std::uint64_t(c), 0u);
            for (int f = 0; f < cfg.chunkFrames; ++f)
                x.push_back(constant(t, rng.template gaussian<S>(cfg.pixelsPerFrame(), cfg.cz)));
        }

        std::vector<Var<S>> clean;
        for (size_t k = 0; k < steps.size(); ++k) {
            bool carriesGrad = !opt.training || int(k) == gradStep;
            const std::vector<Var<S>>& useCond = carriesGrad ? condChunk : condDetached;
            std::vector<Var<S>> in;
            for (auto& v : x) in.push_back(carriesGrad ? v : detach(v));
            clean = net.denoiseChunk(t, in, useCond, steps[k], res.cache);
            if (opt.training && !carriesGrad)
                for (auto& v : clean) v = detach(v);
            if (opt.training && int(k) == gradStep) break;  // later steps would discard this grad
            if (k + 1 < steps.size()) {
                double sNext = cfg.schedule.sigma(steps[k + 1]);
                Rng rng = Rng::keyed(opt.seed, opt.clipId, std::uint64_t(c), std::uint64_t(k + 1));
                std::vector<Var<S>> renoised;
                for (int f = 0; f < cfg.chunkFrames; ++f) {
                    MatX<S> eps = rng.template gaussian<S>(cfg.pixelsPerFrame(), cfg.cz);
                    Var<S> mix = scale(detach(clean[size_t(f)]), S(1.0 - sNext));
                    renoised.push_back(add(mix, constant(t, MatX<S>(eps * S(sNext)))));
                }
                x = std::move(renoised);
            }
        }

        res.chunkLatents.push_back(clean);
        net.commitChunk(t, clean, condChunk, res.cache);
        committedLat.push_back(clean);
        committedCond.push_back(condChunk);

        if (opt.decodeFrames)
            for (auto& lat : clean) res.frames.push_back(vae.decode(t, lat));
    }
    return res;
}

/// RGB-conditioning path: encodes each condition frame with the (frozen)
/// pixel encoder. Produces cond tensors with the same shape as the feature
/// path, which forces C_f == C_z.
template <typename S>
std::vector<Var<S>> encodeConditionRgb(Tape<S>& t, const PixelVae<S>& vae,
                                       const std::vector<Var<S>>& rgbFrames) {
    std::vector<Var<S>> cond;
    for (auto& f : rgbFrames) cond.push_back(vae.encode(t, f));
    return cond;
}

}  // namespace visa
