#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fd_check.hpp"
#include "visa/shader/shader.hpp"
#include "visa/shader/vae.hpp"

#include <algorithm>
#include <cmath>

using namespace visa;

namespace {

template <typename S>
double maxAbsDiff(const MatX<S>& a, const MatX<S>& b) {
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    if (a.size() == 0) return 0.0;
    return double((a - b).cwiseAbs().maxCoeff());
}

struct Rig {
    ParamStore<double> store;
    ShaderConfig cfg;
    ShaderNet<double> net;
    PixelVae<double> vae;

    explicit Rig(unsigned seed = 7, ShaderConfig c = {}) : cfg(c) {
        Rng rng(seed);
        net = ShaderNet<double>(store, cfg, rng);
        vae = PixelVae<double>(store, cfg.cz, 8 * cfg.latentH, rng);
    }
};

std::vector<Var<double>> randomCond(Tape<double>& t, const ShaderConfig& cfg, int frames,
                                    unsigned seed) {
    Rng rng(seed);
    std::vector<Var<double>> cond;
    for (int f = 0; f < frames; ++f)
        cond.push_back(
            constant(t, rng.uniformMat<double>(cfg.pixelsPerFrame(), cfg.cf, -0.5, 0.5)));
    return cond;
}

}  // namespace

TEST_CASE("rotary embedding: inner products depend only on relative position") {
    Rng rng(11);
    Tape<double> t;
    const Index d = 16;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        MatX<double> qm = rng.uniformMat<double>(1, d, -1, 1);
        MatX<double> km = rng.uniformMat<double>(1, d, -1, 1);
        double m = rng.uniform(0, 50), n = rng.uniform(0, 50), s = rng.uniform(-20, 60);
        auto dot = [&](double pq, double pk) {
            Var<double> q = ropeRotate(constant(t, qm), {pq});
            Var<double> k = ropeRotate(constant(t, km), {pk});
            return (q.v() * k.v().transpose())(0, 0);
        };
        worst = std::max(worst, std::abs(dot(m, n) - dot(m + s, n + s)));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("rotary embedding: two-dimensional hand case is a plain rotation") {
    Tape<double> t;
    double p = 0.7;
    MatX<double> x(1, 2);
    x << 1.0, 0.0;
    Var<double> y = ropeRotate(constant(t, x), {p});
    CHECK(y.v()(0, 0) == doctest::Approx(std::cos(p)).epsilon(1e-12));
    CHECK(y.v()(0, 1) == doctest::Approx(std::sin(p)).epsilon(1e-12));

    MatX<double> z(1, 2);
    z << 0.3, -0.5;
    Var<double> w = ropeRotate(constant(t, z), {p});
    CHECK(w.v()(0, 0) == doctest::Approx(0.3 * std::cos(p) + 0.5 * std::sin(p)).epsilon(1e-12));
    CHECK(w.v()(0, 1) == doctest::Approx(0.3 * std::sin(p) - 0.5 * std::cos(p)).epsilon(1e-12));

    // zero position leaves the input untouched
    Var<double> id = ropeRotate(constant(t, z), {0.0});
    CHECK(maxAbsDiff(id.v(), z) == 0.0);
}

TEST_CASE("pixel autoencoder: shapes, determinism, bounded output") {
    ParamStore<double> store;
    Rng rng(3);
    PixelVae<double> vae(store, 8, 64, rng);
    Tape<double> t;

    Var<double> zeroFrame = constant(t, MatX<double>::Zero(64 * 64, 3));
    Var<double> z1 = vae.encode(t, zeroFrame);
    Var<double> z2 = vae.encode(t, zeroFrame);
    CHECK(z1.rows() == 64);
    CHECK(z1.cols() == 8);
    CHECK(maxAbsDiff(z1.v(), z2.v()) == 0.0);

    Var<double> gray = constant(t, MatX<double>::Constant(64 * 64, 3, 0.5));
    CHECK(vae.encode(t, gray).v().cwiseAbs().maxCoeff() > 0.0);

    Var<double> img = vae.decode(t, z1);
    CHECK(img.rows() == 64 * 64);
    CHECK(img.cols() == 3);
    CHECK(img.v().minCoeff() > 0.0);
    CHECK(img.v().maxCoeff() < 1.0);

    CHECK_THROWS_AS(vae.encode(t, constant(t, MatX<double>::Zero(32 * 32, 3))), InvalidInput);
    CHECK_THROWS_AS(vae.decode(t, constant(t, MatX<double>::Zero(64, 4))), InvalidInput);

    long calls = vae.encodeCalls;
    vae.encode(t, zeroFrame);
    CHECK(vae.encodeCalls == calls + 1);
}

TEST_CASE("reference encoding fills exactly one latent frame of cache") {
    Rig rig;
    Tape<double> t;
    Rng rng(21);
    MatX<double> refMat = rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cz, -1, 1);

    KVCache<double> cache;
    rig.net.encodeReference(t, constant(t, refMat), cache);
    CHECK(cache.refSpan == rig.cfg.tokensPerFrame());
    CHECK(cache.length() == rig.cfg.tokensPerFrame());
    CHECK(Index(cache.layers.size()) == rig.cfg.layers);
    REQUIRE(Index(cache.positions.size()) == rig.cfg.tokensPerFrame());
    for (Index j = 0; j < rig.cfg.tokensPerFrame(); ++j)
        CHECK(cache.positions[size_t(j)] == double(j));

    KVCache<double> again;
    rig.net.encodeReference(t, constant(t, refMat), again);
    for (size_t l = 0; l < cache.layers.size(); ++l) {
        CHECK(maxAbsDiff(cache.layers[l].k, again.layers[l].k) == 0.0);
        CHECK(maxAbsDiff(cache.layers[l].v, again.layers[l].v) == 0.0);
    }

    CHECK_THROWS_AS(rig.net.encodeReference(t, constant(t, refMat), cache), InvalidInput);
}

TEST_CASE("commit appends one chunk of tokens and never rewrites the reference span") {
    Rig rig;
    Tape<double> t;
    Rng rng(5);
    KVCache<double> cache;
    rig.net.encodeReference(
        t, constant(t, rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cz, -1, 1)),
        cache);

    std::vector<MatX<double>> refK, refV;
    for (auto& l : cache.layers) {
        refK.push_back(l.k.topRows(cache.refSpan));
        refV.push_back(l.v.topRows(cache.refSpan));
    }

    auto cond = randomCond(t, rig.cfg, rig.cfg.chunkFrames, 31);
    std::vector<Var<double>> noisy;
    for (int f = 0; f < rig.cfg.chunkFrames; ++f)
        noisy.push_back(
            constant(t, rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cz, -1, 1)));

    auto clean = rig.net.denoiseChunk(t, noisy, cond, 500, cache);
    REQUIRE(int(clean.size()) == rig.cfg.chunkFrames);
    CHECK(clean[0].rows() == rig.cfg.pixelsPerFrame());
    CHECK(clean[0].cols() == rig.cfg.cz);
    CHECK(cache.length() == rig.cfg.tokensPerFrame());  // denoise alone must not grow the cache

    Index chunkTokens = Index(rig.cfg.chunkFrames) * rig.cfg.tokensPerFrame();
    rig.net.commitChunk(t, clean, cond, cache);
    CHECK(cache.length() == rig.cfg.tokensPerFrame() + chunkTokens);
    rig.net.commitChunk(t, clean, cond, cache);
    CHECK(cache.length() == rig.cfg.tokensPerFrame() + 2 * chunkTokens);

    for (size_t l = 0; l < cache.layers.size(); ++l) {
        CHECK(maxAbsDiff<double>(cache.layers[l].k.topRows(cache.refSpan), refK[l]) == 0.0);
        CHECK(maxAbsDiff<double>(cache.layers[l].v.topRows(cache.refSpan), refV[l]) == 0.0);
    }
}

TEST_CASE("denoise step reacts to the condition channels") {
    Rig rig;
    Tape<double> t;
    Rng rng(13);
    KVCache<double> cache;
    rig.net.encodeReference(
        t, constant(t, rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cz, -1, 1)),
        cache);

    std::vector<Var<double>> noisy;
    for (int f = 0; f < rig.cfg.chunkFrames; ++f)
        noisy.push_back(
            constant(t, rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cz, -1, 1)));

    std::vector<Var<double>> condA, condB;
    for (int f = 0; f < rig.cfg.chunkFrames; ++f) {
        condA.push_back(constant(t, MatX<double>::Zero(rig.cfg.pixelsPerFrame(), rig.cfg.cf)));
        condB.push_back(
            constant(t, MatX<double>::Ones(rig.cfg.pixelsPerFrame(), rig.cfg.cf) * 0.5));
    }
    auto outA = rig.net.denoiseChunk(t, noisy, condA, 750, cache);
    auto outB = rig.net.denoiseChunk(t, noisy, condB, 750, cache);
    CHECK(maxAbsDiff(outA[0].v(), outB[0].v()) > 1e-6);

    // and to the timestep
    auto outC = rig.net.denoiseChunk(t, noisy, condA, 250, cache);
    CHECK(maxAbsDiff(outA[0].v(), outC[0].v()) > 1e-6);

    // shape guards
    std::vector<Var<double>> badCond = condA;
    badCond[0] = constant(t, MatX<double>::Zero(rig.cfg.pixelsPerFrame(), rig.cfg.cf + 1));
    CHECK_THROWS_AS(rig.net.denoiseChunk(t, noisy, badCond, 750, cache), InvalidInput);
}

TEST_CASE("rollout: incremental cache equals a from-scratch rebuild") {
    Rig rig;
    Rng rng(101);
    MatX<double> refMat = rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cz, -1, 1);

    RolloutOptions opt;
    opt.seed = 4;
    opt.clipId = 2;
    opt.decodeFrames = false;

    Tape<double> ta;
    auto condA = randomCond(ta, rig.cfg, 2 * rig.cfg.chunkFrames, 77);
    auto runA = rollout(ta, rig.net, rig.vae, constant(ta, refMat), condA, opt);

    opt.rebuildCache = true;
    Tape<double> tb;
    auto condB = randomCond(tb, rig.cfg, 2 * rig.cfg.chunkFrames, 77);
    auto runB = rollout(tb, rig.net, rig.vae, constant(tb, refMat), condB, opt);

    REQUIRE(runA.chunkLatents.size() == runB.chunkLatents.size());
    double worst = 0.0;
    for (size_t c = 0; c < runA.chunkLatents.size(); ++c)
        for (size_t f = 0; f < runA.chunkLatents[c].size(); ++f)
            worst = std::max(worst,
                             maxAbsDiff(runA.chunkLatents[c][f].v(), runB.chunkLatents[c][f].v()));
    CHECK(worst <= 1e-5);

    for (size_t l = 0; l < runA.cache.layers.size(); ++l) {
        CHECK(maxAbsDiff(runA.cache.layers[l].k, runB.cache.layers[l].k) <= 1e-5);
        CHECK(maxAbsDiff(runA.cache.layers[l].v, runB.cache.layers[l].v) <= 1e-5);
    }
}

TEST_CASE("rollout: truncating the condition sequence reproduces the first chunk exactly") {
    Rig rig;
    Rng rng(55);
    MatX<double> refMat = rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cz, -1, 1);

    RolloutOptions opt;
    opt.seed = 9;
    opt.decodeFrames = false;

    Tape<double> ta;
    auto condFull = randomCond(ta, rig.cfg, 3 * rig.cfg.chunkFrames, 19);
    auto runFull = rollout(ta, rig.net, rig.vae, constant(ta, refMat), condFull, opt);

    Tape<double> tb;
    auto condAll = randomCond(tb, rig.cfg, 3 * rig.cfg.chunkFrames, 19);
    std::vector<Var<double>> condHead(condAll.begin(), condAll.begin() + rig.cfg.chunkFrames);
    auto runHead = rollout(tb, rig.net, rig.vae, constant(tb, refMat), condHead, opt);

    REQUIRE(runFull.chunkLatents.size() == 3);
    REQUIRE(runHead.chunkLatents.size() == 1);
    for (int f = 0; f < rig.cfg.chunkFrames; ++f)
        CHECK(maxAbsDiff(runFull.chunkLatents[0][size_t(f)].v(),
                         runHead.chunkLatents[0][size_t(f)].v()) == 0.0);
}

TEST_CASE("rollout: single chunk, single step, fixed seed is bit-reproducible") {
    ShaderConfig cfg;
    cfg.schedule.steps = {1000};
    Rig rig(7, cfg);
    Rng rng(23);
    MatX<double> refMat = rng.uniformMat<double>(cfg.pixelsPerFrame(), cfg.cz, -1, 1);

    RolloutOptions opt;
    opt.seed = 17;
    opt.clipId = 5;

    auto run = [&](Tape<double>& t) {
        auto cond = randomCond(t, cfg, cfg.chunkFrames, 42);
        return rollout(t, rig.net, rig.vae, constant(t, refMat), cond, opt);
    };
    Tape<double> ta, tb;
    auto ra = run(ta);
    auto rb = run(tb);
    REQUIRE(ra.frames.size() == size_t(cfg.chunkFrames));
    for (size_t f = 0; f < ra.frames.size(); ++f)
        CHECK(maxAbsDiff(ra.frames[f].v(), rb.frames[f].v()) == 0.0);
}

TEST_CASE("training rollout samples one gradient step per chunk and reaches the condition") {
    Rig rig;
    Rng rng(303);
    MatX<double> refMat = rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cz, -1, 1);

    Tape<double> t;
    std::vector<Parameter<double>*> condParams;
    std::vector<Var<double>> cond;
    for (int f = 0; f < 2 * rig.cfg.chunkFrames; ++f) {
        auto& p = rig.store.add("test.cond" + std::to_string(f),
                                rng.uniformMat<double>(rig.cfg.pixelsPerFrame(), rig.cfg.cf,
                                                       -0.5, 0.5));
        condParams.push_back(&p);
        cond.push_back(leaf(t, p));
    }

    RolloutOptions opt;
    opt.training = true;
    opt.seed = 12;
    opt.clipId = 1;
    auto run = rollout(t, rig.net, rig.vae, constant(t, refMat), cond, opt);

    REQUIRE(run.gradStep.size() == 2);
    for (int g : run.gradStep) {
        CHECK(g >= 0);
        CHECK(g < int(rig.cfg.schedule.steps.size()));
    }
    REQUIRE(run.frames.size() == size_t(2 * rig.cfg.chunkFrames));

    Var<double> loss = mean(run.frames[0]);
    for (size_t f = 1; f < run.frames.size(); ++f) loss = add(loss, mean(run.frames[f]));
    for (auto* p : condParams) p->zeroGrad();
    rig.net.embed.w->zeroGrad();
    t.backward(loss.id);

    for (auto* p : condParams) CHECK(p->grad.norm() > 0.0);
    CHECK(rig.net.embed.w->grad.norm() > 0.0);

    // same seed -> same sampled steps
    Tape<double> t2;
    std::vector<Var<double>> cond2;
    for (auto* p : condParams) cond2.push_back(leaf(t2, *p));
    auto run2 = rollout(t2, rig.net, rig.vae, constant(t2, refMat), cond2, opt);
    CHECK(run2.gradStep == run.gradStep);
}

TEST_CASE("gradients through decode and one denoise step agree with finite differences") {
    ShaderConfig cfg;
    cfg.cz = 4;
    cfg.cf = 4;
    cfg.latentH = cfg.latentW = 4;
    cfg.width = 32;
    cfg.layers = 1;
    cfg.heads = 4;
    cfg.chunkFrames = 1;

    auto runCheck = [&](auto scalarTag, double h, double relTol) {
        using S = decltype(scalarTag);
        ParamStore<S> store;
        Rng rng(29);
        ShaderNet<S> net(store, cfg, rng);
        PixelVae<S> vae(store, cfg.cz, 8 * cfg.latentH, rng);

        Rng data(31);
        MatX<S> refMat = data.uniformMat<S>(cfg.pixelsPerFrame(), cfg.cz, -1, 1);
        MatX<S> noisyMat = data.uniformMat<S>(cfg.pixelsPerFrame(), cfg.cz, -1, 1);
        MatX<S> condMat = data.uniformMat<S>(cfg.pixelsPerFrame(), cfg.cf, -0.5, 0.5);

        KVCache<S> cache;
        {
            Tape<S> warm;
            net.encodeReference(warm, constant(warm, refMat), cache);
        }

        auto forward = [&](const std::vector<MatX<S>>& ins) -> S {
            Tape<S> t;
            Var<S> cond = constant(t, ins[0]);
            auto clean = net.denoiseChunk(t, {constant(t, noisyMat)}, {cond}, 500, cache);
            Var<S> frame = vae.decode(t, clean[0]);
            return mean(frame).v()(0, 0);
        };

        // analytic gradient for the condition input
        MatX<S> condGrad;
        {
            Tape<S> t;
            auto& p = store.add("probe.cond", condMat);
            Var<S> cond = leaf(t, p);
            auto clean = net.denoiseChunk(t, {constant(t, noisyMat)}, {cond}, 500, cache);
            Var<S> frame = vae.decode(t, clean[0]);
            t.backward(mean(frame).id);
            condGrad = p.grad;
        }
        REQUIRE(condGrad.norm() > 0.0);

        // spot-check the three most sensitive coordinates
        std::vector<std::array<Index, 3>> coords;
        MatX<S> mag = condGrad.cwiseAbs();
        for (int pick = 0; pick < 3; ++pick) {
            Index r, c;
            mag.maxCoeff(&r, &c);
            coords.push_back({Index(0), r, c});
            mag(r, c) = S(-1);
        }
        auto rep = visa::testing::fdCompareAt<S>(forward, {condMat}, {condGrad}, coords, S(h));
        CHECK(rep.checked == 3);
        CHECK(rep.maxRel <= relTol);
    };

    runCheck(double(0.0), 1e-5, 1e-6);
    runCheck(float(0.0f), 5e-2, 1e-2);
}

TEST_CASE("rgb conditioning path: one encode per frame, shapes match the feature path") {
    ShaderConfig cfg;  // default cz == cf
    ParamStore<double> store;
    Rng rng(41);
    PixelVae<double> vae(store, cfg.cz, 64, rng);

    Tape<double> t;
    std::vector<Var<double>> frames;
    for (int f = 0; f < 5; ++f)
        frames.push_back(constant(t, rng.uniformMat<double>(64 * 64, 3, 0, 1)));

    vae.encodeCalls = 0;
    auto cond = encodeConditionRgb(t, vae, frames);
    CHECK(vae.encodeCalls == 5);
    REQUIRE(cond.size() == 5);
    for (auto& c : cond) {
        CHECK(c.rows() == cfg.pixelsPerFrame());
        CHECK(c.cols() == cfg.cf);  // identical shape to the rendered-feature path
    }
}
