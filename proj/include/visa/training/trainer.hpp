#pragma once

#include "visa/losses/adversarial.hpp"
#include "visa/training/checkpoint.hpp"
#include "visa/training/config.hpp"
#include "visa/training/data.hpp"
#include "visa/training/pipeline.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace visa {

/// One optimization step's ledger row: stage, per-component means over the
/// batch, gradient norms, and the self-rollout instrumentation flag (the
/// shader is never teacher-forced; this makes it checkable from logs).
struct StepRecord {
    long step = 0;
    std::string stage;
    bool selfRollout = false;
    double gradNormG = 0, gradNormD = 0;
    std::vector<std::pair<std::string, double>> components;

    double component(const std::string& name) const {
        for (const auto& [k, v] : components)
            if (k == name) return v;
        throw InvalidInput("step record: unknown component " + name);
    }

    bool hasComponent(const std::string& name) const {
        for (const auto& [k, v] : components)
            if (k == name) return true;
        return false;
    }

    nlohmann::json toJson() const {
        nlohmann::json j{{"stage", stage},
                         {"step", step},
                         {"self_rollout", selfRollout},
                         {"grad_norm_g", gradNormG},
                         {"grad_norm_d", gradNormD}};
        for (const auto& [k, v] : components) j[k] = v;
        return j;
    }
};

namespace detail {

struct ComponentAccum {
    std::vector<std::pair<std::string, double>> vals;

    void add(const std::string& name, double v) {
        for (auto& [k, acc] : vals)
            if (k == name) {
                acc += v;
                return;
            }
        vals.emplace_back(name, v);
    }
};

}  // namespace detail

/// Runs the progressive schedule over a fixed clip set: reconstruction
/// warmup, autoencoder pretraining, then the two adversarial stages. All
/// randomness is keyed by (seed, purpose, step), so a restored checkpoint
/// continues the exact trace of an uninterrupted run.
template <typename S>
class Trainer {
public:
    Trainer(Pipeline<S>& pipe, std::vector<TrainClip<S>> clips, TrainConfig cfg)
        : pipe_(pipe), clips_(std::move(clips)), cfg_(std::move(cfg)) {
        cfg_.validate();
        check(!clips_.empty(), "trainer: no training clips");
        for (const auto& c : clips_) {
            check(c.frameCount() >= 2, "trainer: clips need at least two frames");
            check(int(c.params.size()) == c.frameCount() &&
                      int(c.masks.size()) == c.frameCount(),
                  "trainer: clip streams out of sync");
        }
    }

    const TrainConfig& config() const { return cfg_; }
    const std::string& stage() const { return stage_; }
    long stepIndex() const { return step_; }

    // --- warmup: reconstruction objective only ------------------------------

    std::vector<double> runWarmup() {
        auto params = pipe_.store.withPrefix({"feat.", "recon."});
        Adam<S> opt(params, adamOptions(cfg_.warmupLr));
        std::vector<double> trace;
        for (long k = 0; k < cfg_.warmupSteps; ++k) trace.push_back(warmupStep(k, opt));
        stage_ = "warmup";
        return trace;
    }

    double warmupStep(long k, Adam<S>& opt) {
        zeroAllGrads();
        Rng rng = Rng::keyed(cfg_.seed, 0x3A91ull, std::uint64_t(k));
        double total = 0;
        for (int b = 0; b < cfg_.batchSize; ++b) {
            const TrainClip<S>& clip = clips_[size_t(rng.integer(0, int(clips_.size()) - 1))];
            size_t f = size_t(rng.integer(0, clip.frameCount() - 1));
            Tape<S> t;
            AvatarVars<S> av =
                pipe_.reconstructAvatar(t, clip.frames[0], clip.params[0], clip.cam);
            RenderVars<S> rv = pipe_.renderFrame(t, av, clip.params[f], clip.cam);
            auto lb = reconLoss(t, pipe_.perceptual, rv.rgb, rv.mask,
                                constant(t, clip.frames[f].data), constant(t, clip.masks[f].data),
                                pipe_.cfg.imageSize, pipe_.cfg.imageSize, cfg_.weights);
            t.backward(scale(lb.total, S(1.0 / cfg_.batchSize)).id);
            total += lb.part("total") / cfg_.batchSize;
        }
        opt.step();
        return total;
    }

    // --- pixel autoencoder pretraining --------------------------------------

    /// Trains the full autoencoder on clip frames, then freezes the encoder
    /// so latents act as a fixed working space for both stages.
    std::vector<double> pretrainVae() {
        auto params = pipe_.store.withPrefix({"vae."});
        Adam<S> opt(params, adamOptions(cfg_.vaeLr));
        std::vector<double> trace;
        for (long k = 0; k < cfg_.vaeSteps; ++k) {
            zeroAllGrads();
            Rng rng = Rng::keyed(cfg_.seed, 0xAE0ull, std::uint64_t(k));
            double total = 0;
            for (int b = 0; b < cfg_.batchSize; ++b) {
                const TrainClip<S>& clip =
                    clips_[size_t(rng.integer(0, int(clips_.size()) - 1))];
                size_t f = size_t(rng.integer(0, clip.frameCount() - 1));
                Tape<S> t;
                Var<S> x = constant(t, clip.frames[f].data);
                Var<S> y = pipe_.vae.decode(t, pipe_.vae.encode(t, x));
                Var<S> loss = meanSq(sub(y, x));
                t.backward(scale(loss, S(1.0 / cfg_.batchSize)).id);
                total += double(loss.v()(0, 0)) / cfg_.batchSize;
            }
            opt.step();
            trace.push_back(total);
        }
        for (auto* p : pipe_.store.withPrefix({"vae.enc."})) p->frozen = true;
        return trace;
    }

    /// Mean reconstruction PSNR of the (frozen or not) autoencoder over each
    /// clip's reference frame; capped at 99 dB.
    double vaeRoundTripPsnr() {
        double acc = 0;
        for (const auto& clip : clips_) {
            Tape<S> t;
            Var<S> x = constant(t, clip.frames[0].data);
            Var<S> y = pipe_.vae.decode(t, pipe_.vae.encode(t, x));
            double mse = double((y.v() - x.v()).squaredNorm()) / double(x.v().size());
            acc += mse <= 1e-10 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
        }
        return acc / double(clips_.size());
    }

    // --- stages --------------------------------------------------------------

    std::vector<std::string> stage2Selector() const {
        if (!cfg_.stage2Selector.empty()) return cfg_.stage2Selector;
        std::vector<std::string> sel{"shader.embed."};
        for (int l = 0; l < pipe_.cfg.shader.layers; ++l)
            sel.push_back("shader.blk" + std::to_string(l) + ".attn.");
        return sel;
    }

    void beginStage(const std::string& stage) {
        check(stage == "stage1" || stage == "stage2", "trainer: unknown stage " + stage);
        const StagePlan& plan = stage == "stage1" ? cfg_.stage1 : cfg_.stage2;
        check(plan.clipFrames % pipe_.cfg.shader.chunkFrames == 0,
              "trainer: clip length must be a multiple of the chunk size");
        for (const auto& c : clips_)
            check(c.frameCount() >= plan.clipFrames,
                  "trainer: clip " + c.id + " shorter than the stage window");

        stage_ = stage;
        step_ = 0;
        applyFreezePolicy();

        std::vector<std::string> gPrefixes =
            stage == "stage1" ? std::vector<std::string>{"feat.", "recon.", "shader.", "vae.dec."}
                              : stage2Selector();
        gParams_ = pipe_.store.withPrefix(gPrefixes);
        optG_ = std::make_unique<Adam<S>>(gParams_, adamOptions(plan.lr));

        disc_.reset();
        dstore_.reset();
        optD_.reset();
        if (cfg_.weights.adv > 0) {
            dstore_ = std::make_unique<ParamStore<S>>();
            Rng rng = Rng::keyed(cfg_.seed, 0xD15Cull, stage == "stage1" ? 1 : 2);
            disc_ = std::make_unique<Discriminator<S>>(*dstore_, pipe_.cfg.shader, rng);
            disc_->adoptBackbone(pipe_.store);
            std::vector<Parameter<S>*> headParams;
            for (auto& p : dstore_->all()) headParams.push_back(&p);
            optD_ = std::make_unique<Adam<S>>(headParams, adamOptions(plan.lr));
        }
        rebuildCaches();
    }

    StepRecord trainStep() {
        check(stage_ == "stage1" || stage_ == "stage2",
              "trainer: beginStage before trainStep");
        StepRecord rec = stage_ == "stage1" ? stage1Step(step_) : stage2Step(step_);
        ++step_;
        return rec;
    }

    // --- checkpointing -------------------------------------------------------

    void save(const std::filesystem::path& dir) {
        saveCheckpoint(buildSpec(), CheckpointMeta{stage_, step_, cfg_.seed}, dir);
    }

    /// Restores stage, step, parameters, and optimizer state. Caches derived
    /// from frozen parameters are rebuilt after the weights land.
    void restore(const std::filesystem::path& dir) {
        CheckpointMeta meta = peekCheckpoint(dir);
        if (meta.stage == "stage1" || meta.stage == "stage2") {
            beginStage(meta.stage);
            loadCheckpoint(buildSpec(), dir);
            rebuildCaches();
        } else {
            loadCheckpoint(buildSpec(), dir);
        }
        stage_ = meta.stage;
        step_ = meta.step;
    }

    Discriminator<S>* disc() { return disc_.get(); }
    ParamStore<S>* discStore() { return dstore_.get(); }
    Adam<S>* optG() { return optG_.get(); }

private:
    typename Adam<S>::Options adamOptions(double lr) const {
        return {S(lr), S(cfg_.beta1), S(cfg_.beta2), S(1e-8), S(cfg_.clipNorm)};
    }

    void zeroAllGrads() {
        for (auto& p : pipe_.store.all()) p.zeroGrad();
        if (dstore_)
            for (auto& p : dstore_->all()) p.zeroGrad();
    }

    void applyFreezePolicy() {
        if (stage_ == "stage1") {
            for (auto& p : pipe_.store.all())
                p.frozen = p.name.rfind("vae.enc.", 0) == 0;
        } else {
            auto sel = stage2Selector();
            for (auto& p : pipe_.store.all()) {
                bool trainable = false;
                for (const auto& pre : sel)
                    if (p.name.rfind(pre, 0) == 0) trainable = true;
                p.frozen = !trainable;
            }
        }
    }

    /// Latents of every clip frame and the reference latent are functions of
    /// the frozen encoder, so they are computed once per stage. Stage 2 also
    /// freezes the reconstructor, which makes the per-frame condition renders
    /// constant as well.
    void rebuildCaches() {
        latGt_.assign(clips_.size(), {});
        refLat_.assign(clips_.size(), MatX<S>());
        condCache_.assign(clips_.size(), {});
        for (size_t c = 0; c < clips_.size(); ++c) {
            const TrainClip<S>& clip = clips_[c];
            Tape<S> t;
            for (int f = 0; f < clip.frameCount(); ++f)
                latGt_[c].push_back(
                    pipe_.vae.encode(t, constant(t, clip.frames[size_t(f)].data)).v());
            refLat_[c] = latGt_[c][0];
            if (stage_ == "stage2") {
                AvatarVars<S> av =
                    pipe_.reconstructAvatar(t, clip.frames[0], clip.params[0], clip.cam);
                for (int f = 0; f < clip.frameCount(); ++f)
                    condCache_[c].push_back(
                        pipe_.renderCond(t, av, clip.params[size_t(f)], clip.cam).v());
            }
        }
    }

    struct ItemOut {
        std::vector<MatX<S>> fakeLat;
        size_t clip = 0;
        int start = 0;
    };

    StepRecord stage1Step(long k) {
        Rng batchRng = Rng::keyed(cfg_.seed, 0xBA7Cull, std::uint64_t(k));
        auto batch = sampleBatch(clips_, cfg_.stage1.clipFrames, cfg_.batchSize, batchRng);
        const int F = cfg_.stage1.clipFrames;
        const double invB = 1.0 / cfg_.batchSize;

        StepRecord rec;
        rec.step = k;
        rec.stage = stage_;
        detail::ComponentAccum acc;
        std::vector<ItemOut> outs;

        zeroAllGrads();
        for (int b = 0; b < cfg_.batchSize; ++b) {
            const BatchItem& it = batch[size_t(b)];
            const TrainClip<S>& clip = clips_[it.clip];
            Tape<S> t;

            AvatarVars<S> av =
                pipe_.reconstructAvatar(t, clip.frames[0], clip.params[0], clip.cam);
            std::vector<Var<S>> cond;
            for (int f = 0; f < F; ++f)
                cond.push_back(pipe_.renderCond(t, av, clip.params[size_t(it.start + f)],
                                                clip.cam));

            RolloutOptions ro;
            ro.training = true;
            ro.seed = cfg_.seed;
            ro.clipId = std::uint64_t(k) * std::uint64_t(cfg_.batchSize) + std::uint64_t(b);
            auto res = rollout(t, pipe_.shader, pipe_.vae,
                               constant(t, refLat_[it.clip]), cond, ro);
            rec.selfRollout = !res.gradStep.empty();

            std::vector<Var<S>> latHat, latGt, framesGt;
            for (const auto& chunk : res.chunkLatents)
                for (const auto& z : chunk) latHat.push_back(z);
            for (int f = 0; f < F; ++f) {
                latGt.push_back(constant(t, latGt_[it.clip][size_t(it.start + f)]));
                framesGt.push_back(constant(t, clip.frames[size_t(it.start + f)].data));
            }

            auto paired = pairedLoss(t, pipe_.perceptual, res.frames, latHat, framesGt, latGt,
                                     pipe_.cfg.imageSize, pipe_.cfg.imageSize, cfg_.weights);

            RenderVars<S> rv = pipe_.renderFrame(t, av, clip.params[size_t(it.evalFrame)],
                                                 clip.cam);
            auto recon = reconLoss(t, pipe_.perceptual, rv.rgb, rv.mask,
                                   constant(t, clip.frames[size_t(it.evalFrame)].data),
                                   constant(t, clip.masks[size_t(it.evalFrame)].data),
                                   pipe_.cfg.imageSize, pipe_.cfg.imageSize, cfg_.weights);

            Var<S> total = add(recon.total, paired.total);
            double advVal = 0;
            if (disc_) {
                auto gl = gLoss(t, *disc_, latGt, latHat, constant(t, clip.frames[0].data));
                total = add(total, scale(gl.total, S(cfg_.weights.adv)));
                advVal = gl.part("relativistic");
            }
            t.backward(scale(total, S(invB)).id);

            for (const auto& [name, v] : recon.parts) acc.add("recon_" + name, v * invB);
            for (const auto& [name, v] : paired.parts) acc.add("paired_" + name, v * invB);
            acc.add("adv_g", advVal * invB);
            acc.add("total", double(total.v()(0, 0)) * invB);

            ItemOut io;
            io.clip = it.clip;
            io.start = it.start;
            for (const auto& z : latHat) io.fakeLat.push_back(z.v());
            outs.push_back(std::move(io));
        }
        rec.gradNormG = double(optG_->step());

        discriminatorUpdate(k, F, outs, acc, rec);
        rec.components = std::move(acc.vals);
        return rec;
    }

    /// Stage 2: the reconstructor and both codec halves are frozen, so
    /// conditions and targets come from the per-stage cache and the render
    /// loss (gradient-free here) is dropped from the objective.
    StepRecord stage2Step(long k) {
        Rng batchRng = Rng::keyed(cfg_.seed, 0xBA7Cull, std::uint64_t(k));
        auto batch = sampleBatch(clips_, cfg_.stage2.clipFrames, cfg_.batchSize, batchRng);
        const int F = cfg_.stage2.clipFrames;
        const double invB = 1.0 / cfg_.batchSize;

        StepRecord rec;
        rec.step = k;
        rec.stage = stage_;
        detail::ComponentAccum acc;
        std::vector<ItemOut> outs;

        zeroAllGrads();
        for (int b = 0; b < cfg_.batchSize; ++b) {
            const BatchItem& it = batch[size_t(b)];
            const TrainClip<S>& clip = clips_[it.clip];
            Tape<S> t;

            std::vector<Var<S>> cond;
            for (int f = 0; f < F; ++f)
                cond.push_back(constant(t, condCache_[it.clip][size_t(it.start + f)]));

            RolloutOptions ro;
            ro.training = true;
            ro.seed = cfg_.seed;
            ro.clipId = std::uint64_t(k) * std::uint64_t(cfg_.batchSize) + std::uint64_t(b);
            auto res = rollout(t, pipe_.shader, pipe_.vae,
                               constant(t, refLat_[it.clip]), cond, ro);
            rec.selfRollout = !res.gradStep.empty();

            std::vector<Var<S>> latHat, latGt, framesGt;
            for (const auto& chunk : res.chunkLatents)
                for (const auto& z : chunk) latHat.push_back(z);
            for (int f = 0; f < F; ++f) {
                latGt.push_back(constant(t, latGt_[it.clip][size_t(it.start + f)]));
                framesGt.push_back(constant(t, clip.frames[size_t(it.start + f)].data));
            }

            auto paired = pairedLoss(t, pipe_.perceptual, res.frames, latHat, framesGt, latGt,
                                     pipe_.cfg.imageSize, pipe_.cfg.imageSize, cfg_.weights);

            Var<S> total = paired.total;
            double advVal = 0;
            if (disc_) {
                auto gl = gLoss(t, *disc_, latGt, latHat, constant(t, clip.frames[0].data));
                total = add(total, scale(gl.total, S(cfg_.weights.adv)));
                advVal = gl.part("relativistic");
            }
            t.backward(scale(total, S(invB)).id);

            for (const auto& [name, v] : paired.parts) acc.add("paired_" + name, v * invB);
            acc.add("adv_g", advVal * invB);
            acc.add("total", double(total.v()(0, 0)) * invB);

            ItemOut io;
            io.clip = it.clip;
            io.start = it.start;
            for (const auto& z : latHat) io.fakeLat.push_back(z.v());
            outs.push_back(std::move(io));
        }
        rec.gradNormG = double(optG_->step());

        discriminatorUpdate(k, F, outs, acc, rec);
        rec.components = std::move(acc.vals);
        return rec;
    }

    void discriminatorUpdate(long k, int F, const std::vector<ItemOut>& outs,
                             detail::ComponentAccum& acc, StepRecord& rec) {
        if (!disc_) {
            acc.add("d_relativistic", 0);
            acc.add("d_r1r2", 0);
            acc.add("d_total", 0);
            return;
        }
        const double invB = 1.0 / cfg_.batchSize;
        Rng dRng = Rng::keyed(cfg_.seed, 0xD3D3ull, std::uint64_t(k));
        for (auto* p : optD_->params()) p->zeroGrad();
        for (const ItemOut& io : outs) {
            Tape<S> t;
            std::vector<Var<S>> real, fake;
            for (int f = 0; f < F; ++f) {
                real.push_back(constant(t, latGt_[io.clip][size_t(io.start + f)]));
                fake.push_back(constant(t, io.fakeLat[size_t(f)]));
            }
            auto dl = dLoss(t, *disc_, real, fake,
                            constant(t, clips_[io.clip].frames[0].data), cfg_.weights, dRng);
            t.backward(scale(dl.total, S(invB)).id);
            acc.add("d_relativistic", dl.part("relativistic") * invB);
            acc.add("d_r1r2", dl.part("r1r2") * invB);
            acc.add("d_total", dl.part("total") * invB);
        }
        rec.gradNormD = double(optD_->step());
    }

    CheckpointSpec<S> buildSpec() {
        CheckpointSpec<S> spec;
        spec.stores.push_back({"gen", &pipe_.store});
        if (disc_) {
            spec.stores.push_back({"disc_head", dstore_.get()});
            spec.stores.push_back({"disc_backbone", &disc_->frozenStore});
        }
        if (optG_) spec.optims.push_back({"opt_g", optG_.get()});
        if (optD_) spec.optims.push_back({"opt_d", optD_.get()});
        return spec;
    }

    Pipeline<S>& pipe_;
    std::vector<TrainClip<S>> clips_;
    TrainConfig cfg_;
    std::string stage_ = "init";
    long step_ = 0;

    std::vector<Parameter<S>*> gParams_;
    std::unique_ptr<Adam<S>> optG_;
    std::unique_ptr<ParamStore<S>> dstore_;
    std::unique_ptr<Discriminator<S>> disc_;
    std::unique_ptr<Adam<S>> optD_;

    std::vector<std::vector<MatX<S>>> latGt_;    // [clip][frame] GT latents
    std::vector<MatX<S>> refLat_;                // [clip] reference latent
    std::vector<std::vector<MatX<S>>> condCache_;  // [clip][frame], stage 2 only
};

}  // namespace visa
