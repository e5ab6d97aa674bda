#pragma once

#include "visa/curation/pipeline.hpp"
#include "visa/curation/synth.hpp"
#include "visa/training/config.hpp"
#include "visa/training/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

namespace visa {

/// Procedural body template parameters; the same spec must be used across
/// curate / train / eval runs or the avatars will not line up.
struct TemplateSpec {
    int body = 96;
    int head = 48;
    int joints = 16;
    std::uint64_t seed = 11;

    template <typename S>
    BodyTemplate<S> build() const {
        return makeTemplate<S>(body, head, joints, seed);
    }
};

inline FeatureConfig featureConfigFromJson(const nlohmann::json& j, FeatureConfig c = {}) {
    c.cs = j.value("cs", c.cs);
    c.cv = j.value("cv", c.cv);
    c.d = j.value("d", c.d);
    c.semInput = j.value("sem_input", c.semInput);
    if (j.contains("low_channels")) {
        c.lowChannels.clear();
        for (const auto& v : j.at("low_channels")) c.lowChannels.push_back(v.get<Index>());
    }
    return c;
}

inline ReconConfig reconConfigFromJson(const nlohmann::json& j, ReconConfig c = {}) {
    c.tokenWidth = j.value("token_width", c.tokenWidth);
    c.width = j.value("width", c.width);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.rMax = j.value("r_max", c.rMax);
    c.sMax = j.value("s_max", c.sMax);
    return c;
}

inline ShaderConfig shaderConfigFromJson(const nlohmann::json& j, ShaderConfig c = {}) {
    c.cz = j.value("cz", c.cz);
    c.cf = j.value("cf", c.cf);
    c.latentH = j.value("latent_h", c.latentH);
    c.latentW = j.value("latent_w", c.latentW);
    c.patch = j.value("patch", c.patch);
    c.width = j.value("width", c.width);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.chunkFrames = j.value("chunk_frames", c.chunkFrames);
    if (j.contains("schedule")) {
        c.schedule.steps.clear();
        for (const auto& v : j.at("schedule")) c.schedule.steps.push_back(v.get<int>());
    }
    return c;
}

inline PipelineConfig pipelineConfigFromJson(const nlohmann::json& j, PipelineConfig c = {}) {
    if (j.contains("feat")) c.feat = featureConfigFromJson(j.at("feat"), c.feat);
    if (j.contains("recon")) c.recon = reconConfigFromJson(j.at("recon"), c.recon);
    if (j.contains("shader")) c.shader = shaderConfigFromJson(j.at("shader"), c.shader);
    c.imageSize = j.value("image_size", c.imageSize);
    c.recon.cf = c.shader.cf;  // the rasterized feature plane feeds the shader
    return c;
}

inline CurationConfig curationConfigFromJson(const nlohmann::json& j, CurationConfig c = {}) {
    c.varThreshold = j.value("var_threshold", c.varThreshold);
    c.confThreshold = j.value("conf_threshold", c.confThreshold);
    c.reprojThreshold = j.value("reproj_threshold", c.reprojThreshold);
    if (j.contains("refine")) {
        const auto& r = j.at("refine");
        c.refine.iters = r.value("iters", c.refine.iters);
        c.refine.lr = r.value("lr", c.refine.lr);
        c.refine.maxBacktracks = r.value("max_backtracks", c.refine.maxBacktracks);
        c.refine.divergenceFactor = r.value("divergence_factor", c.refine.divergenceFactor);
    }
    return c;
}

inline SynthOptions synthOptionsFromJson(const nlohmann::json& j, SynthOptions c = {}) {
    c.nClips = j.value("n_clips", c.nClips);
    c.framesPerClip = j.value("frames_per_clip", c.framesPerClip);
    c.imageSize = j.value("image_size", c.imageSize);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline TemplateSpec templateSpecFromJson(const nlohmann::json& j, TemplateSpec c = {}) {
    c.body = j.value("body", c.body);
    c.head = j.value("head", c.head);
    c.joints = j.value("joints", c.joints);
    c.seed = j.value("seed", c.seed);
    return c;
}

/// Everything a tool invocation needs; a config file overlays the defaults
/// and command-line flags overlay the file.
struct AppConfig {
    std::uint64_t seed = 0;
    std::string dataDir = "data";
    std::string manifest;  // defaults to <data_dir>/manifest.json
    std::string checkpointDir = "checkpoints";

    TemplateSpec tpl;
    PipelineConfig pipeline;
    TrainConfig train;
    CurationConfig curation;
    SynthOptions synth;

    std::string mode = "self";     // animate: self | cross
    std::string cond = "";         // bench: feature | rgb | "" = compare both
    int maxFrames = 0;             // animate frame budget, 0 = whole clip
    int benchFrames = 50;
    int benchWarmup = 5;

    std::string manifestPath() const {
        return manifest.empty() ? dataDir + "/manifest.json" : manifest;
    }
};

inline AppConfig appConfigFromJson(const nlohmann::json& j, AppConfig c = {}) {
    c.seed = j.value("seed", c.seed);
    c.dataDir = j.value("data_dir", c.dataDir);
    c.manifest = j.value("manifest", c.manifest);
    c.checkpointDir = j.value("checkpoint_dir", c.checkpointDir);
    if (j.contains("template")) c.tpl = templateSpecFromJson(j.at("template"), c.tpl);
    if (j.contains("pipeline")) c.pipeline = pipelineConfigFromJson(j.at("pipeline"), c.pipeline);
    if (j.contains("train")) c.train = trainConfigFromJson(j.at("train"), c.train);
    if (j.contains("curation")) c.curation = curationConfigFromJson(j.at("curation"), c.curation);
    if (j.contains("synth")) c.synth = synthOptionsFromJson(j.at("synth"), c.synth);
    c.mode = j.value("mode", c.mode);
    c.cond = j.value("cond", c.cond);
    c.maxFrames = j.value("max_frames", c.maxFrames);
    c.benchFrames = j.value("bench_frames", c.benchFrames);
    c.benchWarmup = j.value("bench_warmup", c.benchWarmup);
    return c;
}

inline AppConfig loadAppConfig(const std::string& path) {
    if (path.empty()) return AppConfig{};
    std::ifstream in(path);
    check(bool(in), "config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("config: " + path + " is not valid json: " + e.what());
    }
    return appConfigFromJson(j);
}

}  // namespace visa
