#include <CLI11.hpp>

#include "visa/cli/appconfig.hpp"
#include "visa/curation/synth.hpp"
#include "visa/eval/bench.hpp"
#include "visa/eval/reenact.hpp"
#include "visa/training/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace visa;
namespace fs = std::filesystem;

namespace {

Camera<float> defaultCamera(int imageSize) {
    Camera<float> cam;
    cam.fx = cam.fy = 1.5f * float(imageSize);
    cam.cx = cam.cy = 0.5f * float(imageSize - 1);
    cam.worldToCam.trans = Vec3<float>(0.0f, -0.3f, 2.0f);
    return cam;
}

std::vector<ClipRecord> loadClipDirs(const std::string& dataDir) {
    check(fs::is_directory(dataDir), "data dir not found: " + dataDir);
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(dataDir))
        if (e.is_directory() && fs::exists(e.path() / "params.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    check(!dirs.empty(), "no clip directories under " + dataDir);
    std::vector<ClipRecord> out;
    for (const auto& d : dirs) out.push_back(loadClipMeta(d));
    return out;
}

std::vector<TrainClip<float>> loadKeptClips(const AppConfig& cfg) {
    CurationManifest m = loadManifest(cfg.manifestPath());
    std::vector<TrainClip<float>> clips;
    for (const auto& e : m.entries) {
        if (e.status != "kept") continue;
        clips.push_back(loadTrainClip<float>(loadClipMeta(fs::path(cfg.dataDir) / e.id)));
    }
    check(!clips.empty(), "manifest has no kept clips: " + cfg.manifestPath());
    return clips;
}

const TrainClip<float>& clipById(const std::vector<TrainClip<float>>& clips,
                                 const std::string& id) {
    for (const auto& c : clips)
        if (c.id == id) return c;
    throw InvalidInput("no kept clip with id " + id);
}

void emitReport(const nlohmann::json& j, const std::string& outPath) {
    std::string s = j.dump(2);
    if (!outPath.empty()) {
        std::ofstream f(outPath, std::ios::trunc);
        check(bool(f), "cannot write report to " + outPath);
        f << s << "\n";
    }
    std::cout << s << "\n";
}

/// Builds the pipeline and, unless the caller opts out, loads generator
/// weights from the checkpoint directory.
Pipeline<float> makePipeline(const AppConfig& cfg, bool loadWeights) {
    Pipeline<float> pipe(cfg.tpl.build<float>(), cfg.pipeline, cfg.seed);
    if (loadWeights) {
        fs::path ck = cfg.checkpointDir;
        check(fs::exists(ck / "manifest.json"), "no checkpoint at " + ck.string() +
                                                     " (run warmup/train first)");
        loadStoreSubset<float>(ck, "gen", pipe.store);
    }
    return pipe;
}

int runSynth(const AppConfig& cfg) {
    BodyTemplate<float> tpl = cfg.tpl.build<float>();
    fs::create_directories(cfg.dataDir);
    SynthOptions opt = cfg.synth;
    auto records = synthGenerate(tpl, defaultCamera(opt.imageSize), cfg.dataDir, opt);
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& r : records) ids.push_back(r.id);
    emitReport({{"op", "synth"}, {"dir", cfg.dataDir}, {"clips", ids}}, "");
    return 0;
}

int runCurate(const AppConfig& cfg, const std::string& outPath) {
    std::vector<ClipRecord> records = loadClipDirs(cfg.dataDir);
    BodyTemplate<double> tpl = cfg.tpl.build<double>();
    CurationManifest manifest = runCurationPipeline(records, tpl, cfg.curation);
    for (const auto& r : records)
        if (r.status == "kept") saveClipMeta(r);  // persist refined parameters
    saveManifest(manifest, cfg.manifestPath());

    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : manifest.entries)
        entries.push_back({{"id", e.id},
                           {"status", e.status},
                           {"reason", e.reason},
                           {"initial_error", e.initialError},
                           {"final_error", e.finalError}});
    emitReport({{"op", "curate"},
                {"total", manifest.entries.size()},
                {"kept", manifest.keptCount()},
                {"manifest", cfg.manifestPath()},
                {"entries", entries}},
               outPath);
    return 0;
}

int runWarmup(const AppConfig& cfg, const std::string& outPath) {
    auto clips = loadKeptClips(cfg);
    Pipeline<float> pipe = makePipeline(cfg, false);
    Trainer<float> tr(pipe, clips, cfg.train);

    std::vector<double> warm = tr.runWarmup();
    std::vector<double> vaeTrace = tr.pretrainVae();
    double vaePsnr = tr.vaeRoundTripPsnr();
    tr.save(cfg.checkpointDir);

    emitReport({{"op", "warmup"},
                {"steps", warm.size()},
                {"first_loss", warm.empty() ? 0.0 : warm.front()},
                {"final_loss", warm.empty() ? 0.0 : warm.back()},
                {"vae_steps", vaeTrace.size()},
                {"vae_final_loss", vaeTrace.empty() ? 0.0 : vaeTrace.back()},
                {"vae_round_trip_psnr", vaePsnr},
                {"checkpoint", cfg.checkpointDir}},
               outPath);
    return 0;
}

int runTrain(const AppConfig& cfg, int stage, const std::string& resume, long saveEvery,
             const std::string& outPath) {
    check(stage == 1 || stage == 2, "train: --stage must be 1 or 2");
    const std::string target = "stage" + std::to_string(stage);
    const StagePlan& plan = stage == 1 ? cfg.train.stage1 : cfg.train.stage2;

    auto clips = loadKeptClips(cfg);
    Pipeline<float> pipe = makePipeline(cfg, false);
    Trainer<float> tr(pipe, clips, cfg.train);

    fs::path ck = resume.empty() ? fs::path(cfg.checkpointDir) : fs::path(resume);
    if (fs::exists(ck / "manifest.json")) {
        tr.restore(ck);
        std::cerr << "restored " << tr.stage() << " step " << tr.stepIndex() << " from " << ck
                  << "\n";
    } else {
        check(stage == 1, "train: stage 2 needs a stage 1 checkpoint (none at " + ck.string() +
                              ")");
        std::cerr << "no checkpoint found; starting stage 1 from scratch\n";
    }
    if (tr.stage() != target) tr.beginStage(target);

    fs::path tracePath = fs::path(cfg.checkpointDir).parent_path().empty()
                             ? fs::path("trace_" + target + ".jsonl")
                             : fs::path(cfg.checkpointDir).parent_path() /
                                   ("trace_" + target + ".jsonl");
    std::ofstream trace(tracePath, std::ios::app);
    check(bool(trace), "cannot append to " + tracePath.string());

    double lastTotal = 0.0;
    long ran = 0;
    while (tr.stepIndex() < plan.steps) {
        StepRecord rec = tr.trainStep();
        lastTotal = rec.component("total");
        trace << rec.toJson().dump() << "\n";
        trace.flush();
        ++ran;
        if (rec.step % 10 == 0 || tr.stepIndex() == plan.steps)
            std::cerr << target << " step " << tr.stepIndex() << "/" << plan.steps
                      << " total=" << lastTotal << "\n";
        if (saveEvery > 0 && tr.stepIndex() % saveEvery == 0) tr.save(cfg.checkpointDir);
    }
    tr.save(cfg.checkpointDir);

    emitReport({{"op", "train"},
                {"stage", stage},
                {"steps_run", ran},
                {"step", tr.stepIndex()},
                {"final_total", lastTotal},
                {"trace", tracePath.string()},
                {"checkpoint", cfg.checkpointDir}},
               outPath);
    return 0;
}

int runAnimate(const AppConfig& cfg, const std::string& refId, const std::string& drivingId,
               const std::string& framesDir, const std::string& outPath) {
    auto clips = loadKeptClips(cfg);
    Pipeline<float> pipe = makePipeline(cfg, true);

    const TrainClip<float>& ref = refId.empty() ? clips.front() : clipById(clips, refId);
    const TrainClip<float>* driving = &ref;
    if (cfg.mode == "cross") {
        if (!drivingId.empty()) {
            driving = &clipById(clips, drivingId);
        } else {
            check(clips.size() >= 2, "cross mode needs a second clip or --driving");
            driving = &clips[clips[0].id == ref.id ? 1 : 0];
        }
    } else if (!drivingId.empty()) {
        driving = &clipById(clips, drivingId);
    }

    ReenactOptions opt;
    opt.mode = cfg.mode;
    opt.seed = cfg.seed;
    opt.maxFrames = cfg.maxFrames;
    FaceEmbedder<float> emb;
    auto out = reenact(pipe, ref, *driving, opt, emb);

    if (!framesDir.empty()) {
        fs::create_directories(framesDir);
        for (size_t f = 0; f < out.frames.size(); ++f) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%05zu.png", f);
            writePng((fs::path(framesDir) / buf).string(), out.frames[f]);
        }
    }

    EvalReport rep;
    rep.rows = {out.metrics};
    nlohmann::json j = rep.toJson();
    j["op"] = "animate";
    j["mode"] = cfg.mode;
    j["reference"] = ref.id;
    j["driving"] = driving->id;
    j["frames"] = out.frames.size();
    if (!framesDir.empty()) j["frames_dir"] = framesDir;
    emitReport(j, outPath);
    return 0;
}

int runBench(const AppConfig& cfg, const std::string& outPath) {
    auto clips = loadKeptClips(cfg);
    Pipeline<float> pipe = makePipeline(cfg, fs::exists(fs::path(cfg.checkpointDir) /
                                                        "manifest.json"));
    nlohmann::json j;
    if (cfg.cond.empty()) {
        j = benchCompare(pipe, clips.front(), cfg.benchFrames, cfg.benchWarmup, cfg.seed);
    } else {
        j = benchCond(pipe, clips.front(), cfg.cond, cfg.benchFrames, cfg.benchWarmup, cfg.seed)
                .toJson();
    }
    j["op"] = "bench";
    j["clip"] = clips.front().id;
    emitReport(j, outPath);
    return 0;
}

int runEval(const AppConfig& cfg, const std::string& outPath) {
    auto clips = loadKeptClips(cfg);
    Pipeline<float> pipe = makePipeline(cfg, true);
    FaceEmbedder<float> emb;

    EvalReport rep;
    for (const auto& clip : clips) {
        ReenactOptions opt;
        opt.mode = "self";
        opt.seed = cfg.seed;
        opt.maxFrames = cfg.maxFrames;
        rep.rows.push_back(reenact(pipe, clip, clip, opt, emb).metrics);
        std::cerr << "evaluated " << clip.id << "\n";
    }

    nlohmann::json j = rep.toJson();
    if (clips.size() >= 2) {
        ReenactOptions opt;
        opt.mode = "cross";
        opt.seed = cfg.seed;
        opt.maxFrames = cfg.maxFrames;
        auto cross = reenact(pipe, clips[0], clips[1], opt, emb);
        j["cross"] = {{"reference", clips[0].id},
                      {"driving", clips[1].id},
                      {"ips_cross", cross.metrics.at("ips_cross")}};
    }
    j["op"] = "eval";
    emitReport(j, outPath);
    return 0;
}

/// The config file is loaded before CLI11 parses, so flag values overlay it.
std::string scanConfigPath(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    AppConfig cfg;
    try {
        cfg = loadAppConfig(scanConfigPath(argc, argv));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    CLI::App app{"one-shot gaussian avatars driven by a causal few-step video shader"};
    app.require_subcommand(1);

    std::string configPath, outPath, resume, refId, drivingId, framesDir;
    int stage = 1;
    long saveEvery = 0;

    auto addCommon = [&](CLI::App* sub) {
        sub->add_option("--config", configPath, "json config file; flags override its values");
        sub->add_option("--data", cfg.dataDir, "clip data directory");
        sub->add_option("--manifest", cfg.manifest, "curation manifest path");
        sub->add_option("--ckpt", cfg.checkpointDir, "checkpoint directory");
        sub->add_option("--seed", cfg.seed, "pipeline seed");
        sub->add_option("--out", outPath, "also write the json report here");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic clip dataset");
    addCommon(synth);
    synth->add_option("--clips", cfg.synth.nClips, "number of clips");
    synth->add_option("--frames", cfg.synth.framesPerClip, "frames per clip");
    synth->add_option("--image-size", cfg.synth.imageSize, "rendered frame size");
    synth->add_option("--synth-seed", cfg.synth.seed, "trajectory seed");

    CLI::App* curate = app.add_subcommand("curate", "filter and refine raw clips");
    addCommon(curate);
    curate->add_option("--var-threshold", cfg.curation.varThreshold, "static-motion cut (px^2)");
    curate->add_option("--conf-threshold", cfg.curation.confThreshold, "part confidence cut");
    curate->add_option("--reproj-threshold", cfg.curation.reprojThreshold,
                       "post-refine rms pixel cut");
    curate->add_option("--refine-iters", cfg.curation.refine.iters, "refinement iterations");

    CLI::App* warmup = app.add_subcommand("warmup", "reconstruction warmup + autoencoder pretrain");
    addCommon(warmup);

    CLI::App* train = app.add_subcommand("train", "adversarial distribution-preserving training");
    addCommon(train);
    train->add_option("--stage", stage, "training stage")->check(CLI::Range(1, 2))->required();
    train->add_option("--resume", resume, "checkpoint to restore (defaults to --ckpt)");
    train->add_option("--save-every", saveEvery, "checkpoint every n steps (0 = end only)");

    CLI::App* animate = app.add_subcommand("animate", "reenact a reference with a driving clip");
    addCommon(animate);
    animate->add_option("--mode", cfg.mode, "self | cross")
        ->check(CLI::IsMember({"self", "cross"}));
    animate->add_option("--ref", refId, "reference clip id (default: first kept)");
    animate->add_option("--driving", drivingId, "driving clip id");
    animate->add_option("--max-frames", cfg.maxFrames, "frame budget (0 = all)");
    animate->add_option("--frames-dir", framesDir, "write generated frames here as png");

    CLI::App* bench = app.add_subcommand("bench", "per-stage streaming timings");
    addCommon(bench);
    bench->add_option("--cond", cfg.cond, "feature | rgb (omit to compare both)")
        ->check(CLI::IsMember({"feature", "rgb"}));
    bench->add_option("--frames", cfg.benchFrames, "measured frames");
    bench->add_option("--warmup-frames", cfg.benchWarmup, "discarded leading frames");

    CLI::App* evalc = app.add_subcommand("eval", "self-reenactment metrics over all kept clips");
    addCommon(evalc);
    evalc->add_option("--max-frames", cfg.maxFrames, "frame budget per clip (0 = all)");

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return runSynth(cfg);
        if (curate->parsed()) return runCurate(cfg, outPath);
        if (warmup->parsed()) return runWarmup(cfg, outPath);
        if (train->parsed()) return runTrain(cfg, stage, resume, saveEvery, outPath);
        if (animate->parsed()) return runAnimate(cfg, refId, drivingId, framesDir, outPath);
        if (bench->parsed()) return runBench(cfg, outPath);
        if (evalc->parsed()) return runEval(cfg, outPath);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
