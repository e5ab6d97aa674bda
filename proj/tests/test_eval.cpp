#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "visa/curation/synth.hpp"
#include "visa/eval/bench.hpp"
#include "visa/eval/reenact.hpp"
#include "visa/eval/spectrum.hpp"
#include "visa/training/trainer.hpp"

#include <filesystem>
#include <map>

using namespace visa;
namespace fs = std::filesystem;

namespace {

PipelineConfig smallCfg() {
    PipelineConfig c;
    c.feat.cs = 24;
    c.feat.cv = 24;
    c.feat.d = 16;
    c.feat.lowChannels = {8, 12, 16};
    c.recon.tokenWidth = 64;
    c.recon.width = 64;
    c.recon.layers = 2;
    c.recon.heads = 2;
    c.shader.latentH = c.shader.latentW = 4;
    c.shader.width = 64;
    c.shader.layers = 2;
    c.shader.heads = 2;
    c.imageSize = 32;
    c.recon.cf = c.shader.cf;
    return c;
}

BodyTemplate<float> fixtureTemplate() {
    static BodyTemplate<float> tpl = makeTemplate<float>(48, 24, 8, 11);
    return tpl;
}

const std::vector<TrainClip<float>>& fixtureClips(int framesPerClip) {
    static std::map<int, std::vector<TrainClip<float>>> cache;
    auto it = cache.find(framesPerClip);
    if (it != cache.end()) return it->second;

    fs::path dir = fs::temp_directory_path() / "visa_eval" /
                   ("clips" + std::to_string(framesPerClip));
    fs::remove_all(dir);
    fs::create_directories(dir);
    Camera<float> cam;
    cam.fx = cam.fy = 48;
    cam.cx = cam.cy = 15.5f;
    cam.worldToCam.trans = Vec3<float>(0, -0.3f, 2.0f);
    SynthOptions opt;
    opt.nClips = 2;
    opt.framesPerClip = framesPerClip;
    opt.imageSize = 32;
    opt.seed = 3;
    auto records = synthGenerate(fixtureTemplate(), cam, dir, opt);
    std::vector<TrainClip<float>> clips;
    for (const auto& r : records) clips.push_back(loadTrainClip<float>(r));
    return cache.emplace(framesPerClip, std::move(clips)).first->second;
}

Image<double> randImage(int h, int w, int c, std::uint64_t seed, double lo = 0.2, double hi = 0.6) {
    Rng rng = Rng::keyed(seed, 0x1111ull);
    Image<double> img(h, w, c);
    for (Index i = 0; i < img.data.rows(); ++i)
        for (Index j = 0; j < img.data.cols(); ++j) img.data(i, j) = rng.uniform(lo, hi);
    return img;
}

bool identicalImage(const Image<float>& a, const Image<float>& b) {
    return a.h == b.h && a.w == b.w && a.c == b.c && (a.data.array() == b.data.array()).all();
}

}  // namespace

TEST_CASE("psnr: identity cap and exact offset value") {
    Image<double> x = randImage(16, 16, 3, 5);
    CHECK(psnr(x, x) == 99.0);

    Image<double> y = x;
    y.data.array() += 0.1;
    CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(psnr(y, x) == doctest::Approx(20.0).epsilon(1e-9));

    Image<double> wrong(8, 8, 3);
    CHECK_THROWS_AS(psnr(x, wrong), InvalidInput);
}

TEST_CASE("ssim: identity, symmetry, range, constant-image value") {
    Image<double> x = randImage(16, 16, 3, 6);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));

    Image<double> y = randImage(16, 16, 3, 7);
    double ab = ssim(x, y), ba = ssim(y, x);
    CHECK(std::abs(ab - ba) <= 1e-7);
    CHECK(ab >= -1.0 - 1e-9);
    CHECK(ab <= 1.0 + 1e-9);

    // Constant images: variance terms vanish, so only the luminance factor
    // remains: (2*0.4*0.6 + 1e-4) / (0.4^2 + 0.6^2 + 1e-4).
    Image<double> a(16, 16, 1), b(16, 16, 1);
    a.data.setConstant(0.4);
    b.data.setConstant(0.6);
    CHECK(ssim(a, b) == doctest::Approx(0.4801 / 0.5201).epsilon(1e-9));

    Image<double> tiny(8, 8, 1);
    CHECK_THROWS_AS(ssim(tiny, tiny), InvalidInput);
}

TEST_CASE("face embedder: determinism, unit norm, cosine-distance oracles") {
    FaceEmbedder<double> e1(0xFACEDull), e2(0xFACEDull);
    Image<double> crop = randImage(16, 16, 3, 8);
    VecX<double> a = e1(crop), b = e2(crop);
    CHECK(a.size() == 32);
    CHECK((a - b).norm() == 0.0);
    CHECK(std::abs(a.norm() - 1.0) <= 1e-9);

    CHECK(cosineDistance(a, a) <= 1e-12);
    VecX<double> neg = -a;
    CHECK(cosineDistance(a, neg) == doctest::Approx(2.0).epsilon(1e-12));

    Rng rng = Rng::keyed(77, 0x22ull);
    VecX<double> u = rng.gaussian<double>(32, 1).col(0);
    VecX<double> v = rng.gaussian<double>(32, 1).col(0);
    double brute = 1.0 - u.dot(v) / (u.norm() * v.norm());
    CHECK(cosineDistance(u, v) == doctest::Approx(brute).epsilon(1e-12));

    // A different seed must give a genuinely different network.
    FaceEmbedder<double> e3(0xBEEFull);
    CHECK((e3(crop) - a).norm() > 1e-3);
}

TEST_CASE("ips: identity sequences score zero, crops stay in bounds") {
    const auto& clips = fixtureClips(6);
    const TrainClip<float>& clip = clips.front();
    const int n = 4;

    std::vector<FaceCrop> crops;
    for (int f = 0; f < n; ++f) {
        FaceCrop fc = faceCropRegion(fixtureTemplate(), clip.params[size_t(f)], clip.cam, 32);
        CHECK(fc.size >= 4);
        CHECK(fc.size <= 32);
        CHECK(fc.x0 >= 0);
        CHECK(fc.y0 >= 0);
        CHECK(fc.x0 + fc.size <= 32);
        CHECK(fc.y0 + fc.size <= 32);
        FaceCrop again = faceCropRegion(fixtureTemplate(), clip.params[size_t(f)], clip.cam, 32);
        CHECK(again.x0 == fc.x0);
        CHECK(again.y0 == fc.y0);
        CHECK(again.size == fc.size);
        crops.push_back(fc);
    }

    FaceEmbedder<float> emb;
    std::vector<Image<float>> frames(clip.frames.begin(), clip.frames.begin() + n);
    CHECK(ipsSelf(emb, frames, frames, crops) <= 1e-9);

    FaceCrop refCrop = crops.front();
    std::vector<Image<float>> rep(size_t(n), clip.frames.front());
    CHECK(ipsCross(emb, rep, clip.frames.front(), refCrop,
                   std::vector<FaceCrop>(size_t(n), refCrop)) <= 1e-9);

    double is = ipsSelf(emb, frames,
                        std::vector<Image<float>>(size_t(n), clip.frames.back()), crops);
    CHECK(is >= 0.0);
    CHECK(is <= 2.0);
}

TEST_CASE("spectrum: dft oracle, constant/checkerboard ratio, blur ordering") {
    // Independent quadratic-time DFT as the oracle.
    MatX<double> x = MatX<double>::Random(8, 6);
    MatX<double> re, im;
    dft2(x, re, im);
    for (Index u = 0; u < 8; ++u)
        for (Index v = 0; v < 6; ++v) {
            double sre = 0, sim = 0;
            for (Index yy = 0; yy < 8; ++yy)
                for (Index xx = 0; xx < 6; ++xx) {
                    double ang = -2.0 * M_PI * (double(u * yy) / 8.0 + double(v * xx) / 6.0);
                    sre += x(yy, xx) * std::cos(ang);
                    sim += x(yy, xx) * std::sin(ang);
                }
            CHECK(re(u, v) == doctest::Approx(sre).epsilon(1e-9));
            CHECK(im(u, v) == doctest::Approx(sim).epsilon(1e-9));
        }

    Image<double> flat(16, 16, 1);
    flat.data.setConstant(0.5);
    CHECK(hfEnergyRatio(flat) <= 1e-9);

    // Checkerboard: energy splits evenly between DC and Nyquist, so the high
    // band holds half the magnitude: ratio = (128/207) / (256/256) = 0.6184.
    Image<double> checker(16, 16, 1);
    for (int yy = 0; yy < 16; ++yy)
        for (int xx = 0; xx < 16; ++xx) checker.at(yy, xx, 0) = double((yy + xx) % 2);
    CHECK(hfEnergyRatio(checker) == doctest::Approx(128.0 / 207.0).epsilon(1e-9));

    Image<double> img = randImage(16, 16, 3, 9, 0.0, 1.0);
    Image<double> blur(16, 16, 3);
    for (int yy = 0; yy < 16; ++yy)
        for (int xx = 0; xx < 16; ++xx)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int sy = std::min(std::max(0, yy + dy), 15);
                        int sx = std::min(std::max(0, xx + dx), 15);
                        acc += img.at(sy, sx, c);
                    }
                blur.at(yy, xx, c) = acc / 9.0;
            }
    CHECK(hfEnergyRatio(blur) < hfEnergyRatio(img));

    std::vector<Image<double>> seq{flat, checker};
    double mean = hfEnergyRatio(seq);
    CHECK(mean == doctest::Approx(0.5 * (hfEnergyRatio(flat) + hfEnergyRatio(checker)))
                      .epsilon(1e-12));
}

TEST_CASE("reenact: self mode emits full metrics and is deterministic") {
    Pipeline<float> pipe(fixtureTemplate(), smallCfg(), 77);
    const auto& clips = fixtureClips(6);
    FaceEmbedder<float> emb;

    ReenactOptions opt;
    opt.mode = "self";
    opt.seed = 5;
    auto out = reenact(pipe, clips[0], clips[0], opt, emb);
    CHECK(out.frames.size() == 6);
    for (const auto& f : out.frames) {
        CHECK(f.h == 32);
        CHECK(f.w == 32);
        CHECK(f.c == 3);
        CHECK(f.data.allFinite());
    }
    CHECK(out.metrics.has("psnr"));
    CHECK(out.metrics.has("ssim"));
    CHECK(out.metrics.has("lpips_proxy"));
    CHECK(out.metrics.has("ips_self"));
    CHECK(out.metrics.has("hf_ratio"));
    CHECK(out.metrics.has("hf_ratio_gt"));
    CHECK(!out.metrics.has("ips_cross"));
    CHECK(out.metrics.at("psnr") > 0.0);
    CHECK(out.metrics.at("psnr") <= 99.0);
    CHECK(out.metrics.at("ssim") >= -1.0);
    CHECK(out.metrics.at("ssim") <= 1.0 + 1e-9);
    CHECK(out.metrics.at("ips_self") >= 0.0);
    CHECK(out.metrics.at("ips_self") <= 2.0);

    auto again = reenact(pipe, clips[0], clips[0], opt, emb);
    REQUIRE(again.frames.size() == out.frames.size());
    for (size_t f = 0; f < out.frames.size(); ++f)
        CHECK(identicalImage(out.frames[f], again.frames[f]));
    for (const auto& [k, v] : out.metrics.values) CHECK(again.metrics.at(k) == v);
}

TEST_CASE("reenact: cross mode scores identity only, truncation honours chunks") {
    Pipeline<float> pipe(fixtureTemplate(), smallCfg(), 77);
    const auto& clips = fixtureClips(6);
    FaceEmbedder<float> emb;

    ReenactOptions opt;
    opt.mode = "cross";
    opt.seed = 5;
    auto out = reenact(pipe, clips[0], clips[1], opt, emb);
    CHECK(out.frames.size() == 6);
    CHECK(out.metrics.has("ips_cross"));
    CHECK(!out.metrics.has("psnr"));
    CHECK(!out.metrics.has("ssim"));
    CHECK(out.metrics.at("ips_cross") >= 0.0);
    CHECK(out.metrics.at("ips_cross") <= 2.0);

    opt.maxFrames = 4;  // rounds down to one whole 3-frame chunk
    auto trunc = reenact(pipe, clips[0], clips[1], opt, emb);
    CHECK(trunc.frames.size() == 3);

    ReenactOptions bad;
    bad.mode = "sideways";
    CHECK_THROWS_AS(reenact(pipe, clips[0], clips[1], bad, emb), InvalidInput);
    bad.mode = "self";
    bad.maxFrames = 2;  // below one chunk
    CHECK_THROWS_AS(reenact(pipe, clips[0], clips[0], bad, emb), InvalidInput);
}

TEST_CASE("bench: encoder call counts and stage timings per conditioning mode") {
    Pipeline<float> pipe(fixtureTemplate(), smallCfg(), 77);
    const auto& clips = fixtureClips(6);
    const int n = 6, warm = 2;

    long before = pipe.vae.encodeCalls;
    BenchResult feat = benchCond(pipe, clips[0], "feature", n, warm, 1);
    long featDelta = pipe.vae.encodeCalls - before;
    CHECK(feat.cond == "feature");
    CHECK(feat.frames == n);
    CHECK(feat.encodeCalls == 0);
    CHECK(feat.ms.encode == 0.0);
    CHECK(feat.ms.gsRender > 0.0);
    CHECK(feat.ms.denoise > 0.0);
    CHECK(feat.ms.decode > 0.0);
    CHECK(feat.fps() > 0.0);
    CHECK(featDelta == 1);  // only the one-shot reference latent at setup

    before = pipe.vae.encodeCalls;
    BenchResult rgb = benchCond(pipe, clips[0], "rgb", n, warm, 1);
    long rgbDelta = pipe.vae.encodeCalls - before;
    CHECK(rgb.encodeCalls == n);  // exactly one encode per measured frame
    CHECK(rgb.ms.encode > 0.0);
    // setup reference + every streamed frame (warmup rounds up to chunks)
    long streamed = ((warm + n + 2) / 3) * 3;
    CHECK(rgbDelta == 1 + streamed);

    CHECK_THROWS_AS(benchCond(pipe, clips[0], "latent", n, warm, 1), InvalidInput);
}

TEST_CASE("bench: feature conditioning beats rgb conditioning end to end") {
    Pipeline<float> pipe(fixtureTemplate(), smallCfg(), 77);
    const auto& clips = fixtureClips(6);
    nlohmann::json j = benchCompare(pipe, clips[0], 6, 2, 1);
    CHECK(j["feature"]["encode_calls"].get<long>() == 0);
    CHECK(j["rgb"]["encode_calls"].get<long>() == 6);
    CHECK(j["feature"]["ms_all"].get<double>() < j["rgb"]["ms_all"].get<double>());
    CHECK(j["speedup_measured"].get<double>() > 1.0);
    CHECK(j["reference_saving"].get<double>() == doctest::Approx(0.34));
}

TEST_CASE("eval report: aggregation over shared keys and json layout") {
    EvalReport rep;
    MetricRow r1;
    r1.id = "a";
    r1.set("psnr", 30.0);
    r1.set("ssim", 0.9);
    r1.set("only_a", 1.0);
    MetricRow r2;
    r2.id = "b";
    r2.set("psnr", 20.0);
    r2.set("ssim", 0.7);
    rep.rows = {r1, r2};

    MetricRow agg = rep.aggregate();
    CHECK(agg.at("psnr") == doctest::Approx(25.0));
    CHECK(agg.at("ssim") == doctest::Approx(0.8));
    CHECK(!agg.has("only_a"));

    nlohmann::json j = rep.toJson();
    CHECK(j["clips"].size() == 2);
    CHECK(j["clips"][0]["id"] == "a");
    CHECK(j["clips"][1]["psnr"].get<double>() == doctest::Approx(20.0));
    CHECK(j["aggregate"]["psnr"].get<double>() == doctest::Approx(25.0));

    EvalReport empty;
    CHECK(empty.aggregate().values.empty());
    CHECK_THROWS_AS(r1.at("missing"), InvalidInput);
}
