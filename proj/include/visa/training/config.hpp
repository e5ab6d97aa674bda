#pragma once

#include "visa/losses/objectives.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace visa {

struct StagePlan {
    long steps = 0;
    int clipFrames = 0;  // driving window length, in latent frames
    double lr = 5e-5;
};

/// Full schedule for the progressive run: reconstruction warmup, pixel
/// autoencoder pretraining, then the two adversarial stages. The betas and
/// stage learning rate follow the reference setup; warmup/vae rates are
/// desk-scale choices.
struct TrainConfig {
    std::uint64_t seed = 0;
    int batchSize = 4;
    double beta1 = 0.9, beta2 = 0.999;
    double clipNorm = 1.0;  // global gradient norm; <=0 disables

    long warmupSteps = 200;
    double warmupLr = 1e-3;
    long vaeSteps = 400;
    double vaeLr = 2e-3;
    StagePlan stage1{1000, 9, 5e-5};
    StagePlan stage2{1000, 21, 5e-5};

    LossWeights weights;
    // Empty selects the default set: the condition input layer plus every
    // self-attention block of the shader.
    std::vector<std::string> stage2Selector;

    void validate() const {
        check(batchSize > 0, "train_config: batch size must be positive");
        check(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
              "train_config: betas must lie in [0,1)");
        for (double lr : {warmupLr, vaeLr, stage1.lr, stage2.lr})
            check(lr > 0, "train_config: learning rate must be positive");
        for (long s : {warmupSteps, vaeSteps, stage1.steps, stage2.steps})
            check(s >= 0, "train_config: step counts must be non-negative");
        check(stage1.clipFrames > 0, "train_config: stage1 clip length must be positive");
        check(stage2.clipFrames >= stage1.clipFrames,
              "train_config: stage2 clip length must be >= stage1 clip length");
        weights.validate();
    }
};

namespace detail {

inline void readStage(const nlohmann::json& j, const char* key, StagePlan& p) {
    if (!j.contains(key)) return;
    const auto& s = j.at(key);
    p.steps = s.value("steps", p.steps);
    p.clipFrames = s.value("clip_frames", p.clipFrames);
    p.lr = s.value("lr", p.lr);
}

inline void readWeights(const nlohmann::json& j, LossWeights& w) {
    if (!j.contains("weights")) return;
    const auto& s = j.at("weights");
    w.l1 = s.value("l1", w.l1);
    w.perceptual = s.value("perceptual", w.perceptual);
    w.mask = s.value("mask", w.mask);
    w.latent = s.value("latent", w.latent);
    w.l2 = s.value("l2", w.l2);
    w.pairedPerceptual = s.value("paired_perceptual", w.pairedPerceptual);
    w.style = s.value("style", w.style);
    w.adv = s.value("adv", w.adv);
    w.reg = s.value("reg", w.reg);
    w.sigmaReg = s.value("sigma_reg", w.sigmaReg);
}

}  // namespace detail

/// Overlays JSON fields onto the defaults; unknown keys are ignored so configs
/// can carry tool-level settings alongside.
inline TrainConfig trainConfigFromJson(const nlohmann::json& j, TrainConfig c = {}) {
    c.seed = j.value("seed", c.seed);
    c.batchSize = j.value("batch_size", c.batchSize);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.clipNorm = j.value("clip_norm", c.clipNorm);
    if (j.contains("warmup")) {
        c.warmupSteps = j.at("warmup").value("steps", c.warmupSteps);
        c.warmupLr = j.at("warmup").value("lr", c.warmupLr);
    }
    if (j.contains("vae")) {
        c.vaeSteps = j.at("vae").value("steps", c.vaeSteps);
        c.vaeLr = j.at("vae").value("lr", c.vaeLr);
    }
    detail::readStage(j, "stage1", c.stage1);
    detail::readStage(j, "stage2", c.stage2);
    detail::readWeights(j, c.weights);
    if (j.contains("stage2_selector"))
        c.stage2Selector = j.at("stage2_selector").get<std::vector<std::string>>();
    c.validate();
    return c;
}

inline nlohmann::json toJson(const TrainConfig& c) {
    return nlohmann::json{
        {"seed", c.seed},
        {"batch_size", c.batchSize},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"clip_norm", c.clipNorm},
        {"warmup", {{"steps", c.warmupSteps}, {"lr", c.warmupLr}}},
        {"vae", {{"steps", c.vaeSteps}, {"lr", c.vaeLr}}},
        {"stage1",
         {{"steps", c.stage1.steps}, {"clip_frames", c.stage1.clipFrames}, {"lr", c.stage1.lr}}},
        {"stage2",
         {{"steps", c.stage2.steps}, {"clip_frames", c.stage2.clipFrames}, {"lr", c.stage2.lr}}},
        {"weights",
         {{"l1", c.weights.l1},
          {"perceptual", c.weights.perceptual},
          {"mask", c.weights.mask},
          {"latent", c.weights.latent},
          {"l2", c.weights.l2},
          {"paired_perceptual", c.weights.pairedPerceptual},
          {"style", c.weights.style},
          {"adv", c.weights.adv},
          {"reg", c.weights.reg},
          {"sigma_reg", c.weights.sigmaReg}}},
        {"stage2_selector", c.stage2Selector}};
}

}  // namespace visa
