#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fd_check.hpp"
#include "visa/core/adam.hpp"
#include "visa/losses/adversarial.hpp"
#include "visa/losses/objectives.hpp"
#include "visa/losses/perceptual.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

using namespace visa;

namespace {

ShaderConfig miniCfg() {
    ShaderConfig cfg;
    cfg.cz = 4;
    cfg.cf = 4;
    cfg.latentH = cfg.latentW = 4;
    cfg.width = 32;
    cfg.layers = 1;
    cfg.heads = 4;
    cfg.chunkFrames = 1;
    return cfg;
}

std::vector<Var<double>> latentVideo(Tape<double>& t, const ShaderConfig& cfg, int frames,
                                     unsigned seed) {
    Rng rng(seed);
    std::vector<Var<double>> v;
    for (int f = 0; f < frames; ++f)
        v.push_back(constant(t, rng.uniformMat<double>(cfg.pixelsPerFrame(), cfg.cz, -1, 1)));
    return v;
}

}  // namespace

TEST_CASE("perceptual proxy: zero at identity, symmetric, positive apart") {
    PerceptualFeatures<double> net;
    Tape<double> t;
    Rng rng(2);
    const int h = 16, w = 16;
    MatX<double> xm = rng.uniformMat<double>(h * w, 3, 0, 1);
    MatX<double> ym = rng.uniformMat<double>(h * w, 3, 0, 1);
    Var<double> x = constant(t, xm), y = constant(t, ym);

    CHECK(lpipsProxy(t, net, x, x, h, w).v()(0, 0) == 0.0);
    CHECK(styleLoss(t, net, x, x, h, w).v()(0, 0) == 0.0);

    double fxy = lpipsProxy(t, net, x, y, h, w).v()(0, 0);
    double fyx = lpipsProxy(t, net, y, x, h, w).v()(0, 0);
    CHECK(fxy > 0.0);
    CHECK(fxy == doctest::Approx(fyx).epsilon(1e-7));

    double sxy = styleLoss(t, net, x, y, h, w).v()(0, 0);
    double syx = styleLoss(t, net, y, x, h, w).v()(0, 0);
    CHECK(sxy > 0.0);
    CHECK(sxy == doctest::Approx(syx).epsilon(1e-7));

    // deterministic across separately constructed extractors (seed-pinned)
    PerceptualFeatures<double> net2;
    CHECK(lpipsProxy(t, net2, x, y, h, w).v()(0, 0) == fxy);
}

TEST_CASE("gram matrices are symmetric positive semi-definite") {
    PerceptualFeatures<double> net;
    Tape<double> t;
    Rng rng(9);
    const int h = 16, w = 16;
    Var<double> x = constant(t, rng.uniformMat<double>(h * w, 3, 0, 1));
    auto feats = net(t, x, h, w);
    for (auto& f : feats) {
        MatX<double> g = gram(f).v();
        CHECK((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
        Eigen::SelfAdjointEigenSolver<MatX<double>> es(g);
        CHECK(es.eigenvalues().minCoeff() >= -1e-6);
    }
}

TEST_CASE("reconstruction loss: zero case, analytic offset, component sum") {
    PerceptualFeatures<double> net;
    Tape<double> t;
    Rng rng(4);
    const int h = 16, w = 16;
    MatX<double> img = rng.uniformMat<double>(h * w, 3, 0, 1);
    MatX<double> msk = rng.uniformMat<double>(h * w, 1, 0, 1);
    LossWeights wts;

    auto zero = reconLoss(t, net, constant(t, img), constant(t, msk), constant(t, img),
                          constant(t, msk), h, w, wts);
    CHECK(zero.total.v()(0, 0) == 0.0);

    LossWeights onlyL1;
    onlyL1.l1 = 1.0;
    onlyL1.perceptual = 0.0;
    onlyL1.mask = 0.0;
    MatX<double> shifted = img.array() + 0.1;
    auto off = reconLoss(t, net, constant(t, shifted), constant(t, msk), constant(t, img),
                         constant(t, msk), h, w, onlyL1);
    CHECK(off.total.v()(0, 0) == doctest::Approx(0.1).epsilon(1e-9));

    MatX<double> img2 = rng.uniformMat<double>(h * w, 3, 0, 1);
    MatX<double> msk2 = rng.uniformMat<double>(h * w, 1, 0, 1);
    LossWeights mix;
    mix.l1 = 0.7;
    mix.perceptual = 0.3;
    mix.mask = 1.3;
    auto r = reconLoss(t, net, constant(t, img2), constant(t, msk2), constant(t, img),
                       constant(t, msk), h, w, mix);
    double handSum = 0.7 * r.part("l1") + 0.3 * r.part("perceptual") + 1.3 * r.part("mask");
    CHECK(r.total.v()(0, 0) == doctest::Approx(handSum).epsilon(1e-12));

    LossWeights bad;
    bad.mask = -1.0;
    CHECK_THROWS_AS(reconLoss(t, net, constant(t, img), constant(t, msk), constant(t, img),
                              constant(t, msk), h, w, bad),
                    InvalidInput);
}

TEST_CASE("paired loss: zero case, analytic offset, component sum") {
    PerceptualFeatures<double> net;
    Tape<double> t;
    Rng rng(6);
    const int h = 16, w = 16;
    std::vector<Var<double>> fr, lz;
    for (int f = 0; f < 2; ++f) {
        fr.push_back(constant(t, rng.uniformMat<double>(h * w, 3, 0, 1)));
        lz.push_back(constant(t, rng.uniformMat<double>(16, 4, -1, 1)));
    }
    LossWeights wts;
    auto zero = pairedLoss(t, net, fr, lz, fr, lz, h, w, wts);
    CHECK(zero.total.v()(0, 0) == 0.0);

    // constant latent offset with only the latent term active
    LossWeights onlyZ;
    onlyZ.latent = 1.0;
    onlyZ.l2 = 0.0;
    onlyZ.pairedPerceptual = 0.0;
    onlyZ.style = 0.0;
    std::vector<Var<double>> lzOff;
    for (auto& z : lz) lzOff.push_back(constant(t, MatX<double>(z.v().array() + 0.2)));
    auto off = pairedLoss(t, net, fr, lzOff, fr, lz, h, w, onlyZ);
    CHECK(off.total.v()(0, 0) == doctest::Approx(0.04).epsilon(1e-9));

    std::vector<Var<double>> fr2, lz2;
    for (int f = 0; f < 2; ++f) {
        fr2.push_back(constant(t, rng.uniformMat<double>(h * w, 3, 0, 1)));
        lz2.push_back(constant(t, rng.uniformMat<double>(16, 4, -1, 1)));
    }
    LossWeights mix;
    mix.latent = 0.9;
    mix.l2 = 1.1;
    mix.pairedPerceptual = 0.4;
    mix.style = 0.02;
    auto r = pairedLoss(t, net, fr2, lz2, fr, lz, h, w, mix);
    double handSum = 0.9 * r.part("latent") + 1.1 * r.part("l2") + 0.4 * r.part("perceptual") +
                     0.02 * r.part("style");
    CHECK(r.total.v()(0, 0) == doctest::Approx(handSum).epsilon(1e-12));
}

TEST_CASE("loss gradients match central finite differences") {
    PerceptualFeatures<double> net;
    const int h = 8, w = 8;
    Rng rng(14);
    MatX<double> xm = rng.uniformMat<double>(h * w, 3, 0.2, 0.8);
    MatX<double> ym = rng.uniformMat<double>(h * w, 3, 0.2, 0.8);
    MatX<double> mr = rng.uniformMat<double>(h * w, 1, 0, 1);
    MatX<double> mg = rng.uniformMat<double>(h * w, 1, 0, 1);
    LossWeights wts;

    SUBCASE("perceptual proxy") {
        auto f = [&](const std::vector<MatX<double>>& in) {
            Tape<double> t;
            return lpipsProxy(t, net, constant(t, in[0]), constant(t, in[1]), h, w).v()(0, 0);
        };
        MatX<double> gx, gy;
        {
            Tape<double> t;
            ParamStore<double> ps;
            auto& px = ps.add("x", xm);
            auto& py = ps.add("y", ym);
            t.backward(lpipsProxy(t, net, leaf(t, px), leaf(t, py), h, w).id);
            gx = px.grad;
            gy = py.grad;
        }
        auto rep = visa::testing::fdCompare<double>(f, {xm, ym}, {gx, gy}, 1e-5);
        CHECK(rep.checked > 0);
        CHECK(rep.maxRel <= 1e-3);
    }

    SUBCASE("style proxy") {
        auto f = [&](const std::vector<MatX<double>>& in) {
            Tape<double> t;
            return styleLoss(t, net, constant(t, in[0]), constant(t, ym), h, w).v()(0, 0);
        };
        MatX<double> gx;
        {
            Tape<double> t;
            ParamStore<double> ps;
            auto& px = ps.add("x", xm);
            t.backward(styleLoss(t, net, leaf(t, px), constant(t, ym), h, w).id);
            gx = px.grad;
        }
        auto rep = visa::testing::fdCompare<double>(f, {xm}, {gx}, 1e-5);
        CHECK(rep.checked > 0);
        CHECK(rep.maxRel <= 1e-3);
    }

    SUBCASE("composite reconstruction") {
        auto f = [&](const std::vector<MatX<double>>& in) {
            Tape<double> t;
            return reconLoss(t, net, constant(t, in[0]), constant(t, in[1]), constant(t, ym),
                             constant(t, mg), h, w, wts)
                .total.v()(0, 0);
        };
        MatX<double> gi, gm;
        {
            Tape<double> t;
            ParamStore<double> ps;
            auto& pi = ps.add("img", xm);
            auto& pm = ps.add("msk", mr);
            t.backward(reconLoss(t, net, leaf(t, pi), leaf(t, pm), constant(t, ym),
                                 constant(t, mg), h, w, wts)
                           .total.id);
            gi = pi.grad;
            gm = pm.grad;
        }
        auto rep = visa::testing::fdCompare<double>(f, {xm, mr}, {gi, gm}, 1e-5);
        CHECK(rep.checked > 0);
        CHECK(rep.maxRel <= 1e-3);
    }
}

TEST_CASE("relativistic terms: equilibrium, antisymmetry, hand-computed gap") {
    Tape<double> t;
    auto lg = [&](double a, double b) {
        return relativisticTerm(constant(t, MatX<double>::Constant(1, 1, a)),
                                constant(t, MatX<double>::Constant(1, 1, b)))
            .v()(0, 0);
    };
    CHECK(lg(0.3, 0.3) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(lg(2.0, 0.0) == doctest::Approx(-std::log(1.0 / (1.0 + std::exp(-2.0)))).epsilon(1e-9));
    CHECK(lg(2.0, 0.0) == doctest::Approx(0.126928011).epsilon(1e-6));
    // sigma(x) + sigma(-x) = 1, so the swapped terms satisfy
    // exp(-lg(a,b)) + exp(-lg(b,a)) = 1 exactly
    CHECK(std::exp(-lg(1.3, -0.4)) + std::exp(-lg(-0.4, 1.3)) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lg(1.3, -0.4) != lg(-0.4, 1.3));
}

TEST_CASE("discriminator: conditionality, equilibrium, antisymmetric swap") {
    ShaderConfig cfg = miniCfg();
    ParamStore<double> store;
    Rng rng(8);
    Discriminator<double> disc(store, cfg, rng);
    const int frame = 8 * cfg.latentH;

    Tape<double> t;
    auto video = latentVideo(t, cfg, 2, 31);
    Rng ir(77);
    Var<double> refA = constant(t, ir.uniformMat<double>(frame * frame, 3, 0, 1));
    Var<double> refB = constant(t, ir.uniformMat<double>(frame * frame, 3, 0, 1));

    Var<double> la = disc(t, video, refA);
    CHECK(std::isfinite(la.v()(0, 0)));
    Var<double> lb = disc(t, video, refB);
    CHECK(std::abs(la.v()(0, 0) - lb.v()(0, 0)) > 1e-9);  // reference pathway is live

    // same video on both branches -> exact ln 2 equilibrium
    LossWeights w0;
    w0.reg = 0.0;
    Rng noise(5);
    auto d0 = dLoss(t, disc, video, video, refA, w0, noise);
    CHECK(d0.part("relativistic") == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    auto g0 = gLoss(t, disc, video, video, refA);
    CHECK(g0.part("relativistic") == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // swapping real and fake turns the d-side term into the g-side term
    auto fake = latentVideo(t, cfg, 2, 99);
    Rng n1(5), n2(5);
    auto dAB = dLoss(t, disc, video, fake, refA, w0, n1);
    auto dBA = dLoss(t, disc, fake, video, refA, w0, n2);
    auto gAB = gLoss(t, disc, video, fake, refA);
    CHECK(dBA.part("relativistic") ==
          doctest::Approx(gAB.part("relativistic")).epsilon(1e-12));
    CHECK(dAB.part("relativistic") != dBA.part("relativistic"));
}

TEST_CASE("parameter partition: d_loss moves only the head, g_loss only the generator") {
    ShaderConfig cfg = miniCfg();
    ParamStore<double> store;
    Rng rng(12);
    Discriminator<double> disc(store, cfg, rng);
    const int frame = 8 * cfg.latentH;

    Tape<double> t;
    // "generator output": leaf latents standing in for the rollout result
    std::vector<Parameter<double>*> genParams;
    std::vector<Var<double>> fake;
    Rng gr(3);
    for (int f = 0; f < 2; ++f) {
        auto& p = store.add("gen.latent" + std::to_string(f),
                            gr.uniformMat<double>(cfg.pixelsPerFrame(), cfg.cz, -1, 1));
        genParams.push_back(&p);
        fake.push_back(leaf(t, p));
    }
    auto real = latentVideo(t, cfg, 2, 64);
    Var<double> ref = constant(t, gr.uniformMat<double>(frame * frame, 3, 0, 1));

    auto zeroAll = [&]() {
        for (auto& p : store.all()) p.zeroGrad();
    };

    LossWeights w;
    Rng noise(21);
    zeroAll();
    auto dl = dLoss(t, disc, real, fake, ref, w, noise);
    t.backward(dl.total.id);
    for (auto* p : genParams) CHECK(p->grad.norm() == 0.0);
    CHECK(disc.head1.w->grad.norm() > 0.0);
    CHECK(disc.head2.w->grad.norm() > 0.0);

    zeroAll();
    auto gl = gLoss(t, disc, real, fake, ref);
    t.backward(gl.total.id);
    CHECK(disc.head1.w->grad.norm() == 0.0);
    CHECK(disc.head2.w->grad.norm() == 0.0);
    double gnorm = 0.0;
    for (auto* p : genParams) gnorm += p->grad.norm();
    CHECK(gnorm > 0.0);
    CHECK(disc.head1.w->frozen == false);  // guard restored the trainable state
}

TEST_CASE("frozen backbone: checksum survives a head optimizer step") {
    ShaderConfig cfg = miniCfg();
    ParamStore<double> store;
    Rng rng(18);
    Discriminator<double> disc(store, cfg, rng);
    const int frame = 8 * cfg.latentH;
    std::uint64_t before = disc.backboneChecksum();

    Tape<double> t;
    auto real = latentVideo(t, cfg, 2, 1);
    auto fake = latentVideo(t, cfg, 2, 2);
    Rng ir(9);
    Var<double> ref = constant(t, ir.uniformMat<double>(frame * frame, 3, 0, 1));
    LossWeights w;
    Rng noise(4);
    auto dl = dLoss(t, disc, real, fake, ref, w, noise);
    for (auto& p : store.all()) p.zeroGrad();
    t.backward(dl.total.id);

    auto headParams = store.withPrefix({"disc.head."});
    CHECK(headParams.size() == 4);
    Adam<double> opt(headParams, {});
    opt.step();

    CHECK(disc.backboneChecksum() == before);
}

TEST_CASE("approximate R1/R2 penalty decreases monotonically with the probe noise") {
    ShaderConfig cfg = miniCfg();
    ParamStore<double> store;
    Rng rng(25);
    Discriminator<double> disc(store, cfg, rng);
    const int frame = 8 * cfg.latentH;

    Tape<double> t;
    auto real = latentVideo(t, cfg, 2, 5);
    auto fake = latentVideo(t, cfg, 2, 6);
    Rng ir(13);
    Var<double> ref = constant(t, ir.uniformMat<double>(frame * frame, 3, 0, 1));

    std::vector<double> sigmas{1e-1, 1e-2, 1e-3};
    std::vector<double> penalties;
    for (double s : sigmas) {
        LossWeights w;
        w.sigmaReg = s;
        Rng noise(42);  // same unit noise direction for every scale
        auto dl = dLoss(t, disc, real, fake, ref, w, noise);
        penalties.push_back(dl.part("r1r2"));
    }
    CHECK(penalties[0] > penalties[1]);
    CHECK(penalties[1] > penalties[2]);
    // quadratic decay: two decades of noise shrink the penalty by ~four
    CHECK(penalties[2] < 1e-3 * penalties[0]);
}

TEST_CASE("generator gradient through the frozen discriminator matches finite differences") {
    ShaderConfig cfg = miniCfg();
    ParamStore<double> store;
    Rng rng(33);
    Discriminator<double> disc(store, cfg, rng);
    const int frame = 8 * cfg.latentH;

    Rng gr(51);
    MatX<double> fakeMat = gr.uniformMat<double>(cfg.pixelsPerFrame(), cfg.cz, -1, 1);
    MatX<double> realMat = gr.uniformMat<double>(cfg.pixelsPerFrame(), cfg.cz, -1, 1);
    MatX<double> refMat = gr.uniformMat<double>(frame * frame, 3, 0, 1);

    auto f = [&](const std::vector<MatX<double>>& in) {
        Tape<double> t;
        return gLoss(t, disc, {constant(t, realMat)}, {constant(t, in[0])}, constant(t, refMat))
            .total.v()(0, 0);
    };
    MatX<double> grad;
    {
        Tape<double> t;
        auto& p = store.add("probe.fake", fakeMat);
        auto gl = gLoss(t, disc, {constant(t, realMat)}, {leaf(t, p)}, constant(t, refMat));
        t.backward(gl.total.id);
        grad = p.grad;
    }
    REQUIRE(grad.norm() > 0.0);
    std::vector<std::array<Index, 3>> coords;
    MatX<double> mag = grad.cwiseAbs();
    for (int pick = 0; pick < 5; ++pick) {
        Index r, c;
        mag.maxCoeff(&r, &c);
        coords.push_back({Index(0), r, c});
        mag(r, c) = -1;
    }
    auto rep = visa::testing::fdCompareAt<double>(f, {fakeMat}, {grad}, coords, 1e-5);
    CHECK(rep.checked == 5);
    CHECK(rep.maxRel <= 1e-3);
}

TEST_CASE("loss components serialize as JSON lines") {
    LossBreakdown<double> b;
    Tape<double> t;
    b.total = constant(t, MatX<double>::Constant(1, 1, 0.5));
    b.parts = {{"l1", 0.25}, {"total", 0.5}};
    std::ostringstream os;
    logComponents(os, 7, b);
    std::istringstream is(os.str());
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j["step"] == 7);
        CHECK(j.contains("component"));
        CHECK(j.contains("value"));
        ++n;
    }
    CHECK(n == 2);
}
