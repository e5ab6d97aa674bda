#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Geometry>
#include <doctest.h>

#include "fd_check.hpp"
#include "visa/recon/animate.hpp"
#include "visa/recon/gaussians.hpp"
#include "visa/recon/rasterize.hpp"

using namespace visa;
using visa::testing::fdCompare;

namespace {

// Hand-built splat cloud on the tape, every attribute a differentiable leaf.
struct CloudLeaves {
    std::vector<int> ids;
    PosedGaussians<double> pg;
};

CloudLeaves makeCloud(Tape<double>& t, const MatX<double>& pos, const MatX<double>& rot,
                      const MatX<double>& logs, const MatX<double>& opac,
                      const MatX<double>& color, const MatX<double>& feat) {
    CloudLeaves c;
    auto put = [&](const MatX<double>& m) {
        int id = t.emplace(m, true, nullptr);
        c.ids.push_back(id);
        return Var<double>(&t, id);
    };
    c.pg.centers = put(pos);
    c.pg.rotations = put(rot);
    c.pg.logScales = put(logs);
    c.pg.opacities = put(opac);
    c.pg.colors = put(color);
    c.pg.features = put(feat);
    return c;
}

Camera<double> testCam(double f, double c) {
    Camera<double> cam;
    cam.fx = cam.fy = f;
    cam.cx = cam.cy = c;
    return cam;
}

PoseShapeParams<double> randomPose(const BodyTemplate<double>& tpl, uint64_t seed) {
    Rng rng = Rng::keyed(seed, 8, 0, 0);
    PoseShapeParams<double> p = PoseShapeParams<double>::rest(tpl);
    for (Index j = 0; j < tpl.numJoints(); ++j) {
        Vec3<double> axis(rng.normal(), rng.normal(), rng.normal());
        axis.normalize();
        double ang = 0.5 * (rng.uniform() - 0.5);
        p.quats.row(j) << std::cos(ang / 2), std::sin(ang / 2) * axis.x(),
            std::sin(ang / 2) * axis.y(), std::sin(ang / 2) * axis.z();
    }
    p.translation = Vec3<double>(rng.normal(), rng.normal(), rng.normal()) * 0.05;
    for (Index s = 0; s < p.shape.size(); ++s) p.shape(s) = 0.4 * rng.normal();
    for (Index e = 0; e < p.expr.size(); ++e) p.expr(e) = 0.4 * rng.normal();
    return p;
}

}  // namespace

TEST_CASE("reconstruct: bias determinism, ranges, unit quaternions") {
    BodyTemplate<double> tpl = makeTemplate(24, 12, 8, 15);
    ParamStore<double> store;
    Rng rng = Rng::keyed(3, 0, 0, 0);
    ReconConfig cfg;
    cfg.cf = 8;
    ReconNet<double> net(store, cfg, rng);

    Tape<double> t;
    Var<double> zeroTok = constant(t, MatX<double>::Zero(tpl.numVertices(), cfg.tokenWidth));
    AvatarVars<double> a = net(t, zeroTok, tpl.vertices);
    AvatarVars<double> b = net(t, constant(t, MatX<double>::Zero(tpl.numVertices(), cfg.tokenWidth)),
                               tpl.vertices);
    CHECK(a.positions.v() == b.positions.v());
    CHECK(a.features.v() == b.features.v());

    for (Index i = 0; i < tpl.numVertices(); ++i) {
        CHECK(std::abs(a.rotations.v().row(i).norm() - 1.0) < 1e-9);
        CHECK(a.opacities.v()(i, 0) > 0.0);
        CHECK(a.opacities.v()(i, 0) < 1.0);
        for (int k = 0; k < 3; ++k) {
            double s = std::exp(a.logScales.v()(i, k));
            CHECK(s > 0.0);
            CHECK(s <= cfg.sMax);
            CHECK(a.colors.v()(i, k) > 0.0);
            CHECK(a.colors.v()(i, k) < 1.0);
        }
        // Offsets bounded by rMax around the binding vertex.
        CHECK((a.positions.v().row(i) - tpl.vertices.row(i)).norm() <=
              cfg.rMax * std::sqrt(3.0) + 1e-9);
    }
}

TEST_CASE("reconstruct: permutation equivariance") {
    BodyTemplate<double> tpl = makeTemplate(16, 8, 8, 29);
    Index n = tpl.numVertices();
    ParamStore<double> store;
    Rng rng = Rng::keyed(5, 0, 0, 0);
    ReconConfig cfg;
    cfg.cf = 6;
    ReconNet<double> net(store, cfg, rng);

    MatX<double> tokens = Rng::keyed(9, 9, 9, 9).gaussian<double>(n, cfg.tokenWidth);
    std::vector<Index> perm(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) perm[size_t(i)] = (i * 7 + 3) % n;  // 7 coprime with 24
    MatX<double> ptokens(n, cfg.tokenWidth);
    MatX<double> pverts(n, 3);
    for (Index i = 0; i < n; ++i) {
        ptokens.row(i) = tokens.row(perm[size_t(i)]);
        pverts.row(i) = tpl.vertices.row(perm[size_t(i)]);
    }

    Tape<double> t;
    AvatarVars<double> a = net(t, constant(t, tokens), tpl.vertices);
    AvatarVars<double> b = net(t, constant(t, ptokens), pverts);
    for (Index i = 0; i < n; ++i) {
        CHECK((b.positions.v().row(i) - a.positions.v().row(perm[size_t(i)]))
                  .cwiseAbs()
                  .maxCoeff() < 1e-9);
        CHECK((b.features.v().row(i) - a.features.v().row(perm[size_t(i)])).cwiseAbs().maxCoeff() <
              1e-9);
    }
}

TEST_CASE("animate: identity fixpoint, rigid root, oracle match") {
    BodyTemplate<double> tpl = makeTemplate(20, 10, 10, 33);
    Index n = tpl.numVertices();
    ParamStore<double> store;
    Rng rng = Rng::keyed(2, 0, 0, 0);
    ReconConfig cfg;
    cfg.cf = 4;
    ReconNet<double> net(store, cfg, rng);

    Tape<double> t;
    MatX<double> tokens = Rng::keyed(4, 4, 4, 4).gaussian<double>(n, cfg.tokenWidth);
    AvatarVars<double> av = net(t, constant(t, tokens), tpl.vertices);

    PoseShapeParams<double> rest = PoseShapeParams<double>::rest(tpl);
    PosedGaussians<double> still = animate(t, av, tpl, rest);
    CHECK((still.centers.v() - av.positions.v()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((still.rotations.v() - av.rotations.v()).cwiseAbs().maxCoeff() < 1e-9);

    PoseShapeParams<double> rooted = rest;
    double ang = 0.9;
    rooted.quats.row(0) << std::cos(ang / 2), 0, 0, std::sin(ang / 2);
    Mat3<double> r = quatToMat<double>(rooted.quats.row(0).transpose());
    PosedGaussians<double> spun = animate(t, av, tpl, rooted);
    MatX<double> expect = av.positions.v() * r.transpose();
    CHECK((spun.centers.v() - expect).cwiseAbs().maxCoeff() < 1e-9);

    // Random pose against an independent homogeneous-transform oracle.
    PoseShapeParams<double> pose = randomPose(tpl, 71);
    PosedGaussians<double> posed = animate(t, av, tpl, pose);
    std::vector<Eigen::Affine3d> world(static_cast<size_t>(tpl.numJoints()));
    for (Index j = 0; j < tpl.numJoints(); ++j) {
        Vec4<double> q = normalizeQuat<double>(pose.quats.row(j).transpose());
        Vec3<double> g = tpl.joints.row(j).transpose();
        Eigen::Affine3d local =
            Eigen::Translation3d(g) * Eigen::Quaterniond(q(0), q(1), q(2), q(3)) *
            Eigen::Translation3d(-g);
        int par = tpl.parents[size_t(j)];
        world[size_t(j)] = par < 0 ? local : world[size_t(par)] * local;
    }
    MatX<double> delta = canonicalVertices(tpl, pose) - tpl.vertices;
    for (Index i = 0; i < n; ++i) {
        Vec3<double> u = av.positions.v().row(i).transpose() + delta.row(i).transpose();
        Vec3<double> acc = pose.translation;
        // Blend the affines, then apply (matches the linear skinning field).
        Mat3<double> ab = Mat3<double>::Zero();
        Vec3<double> bb = Vec3<double>::Zero();
        for (Index j = 0; j < tpl.numJoints(); ++j) {
            double w = tpl.weights(i, j);
            ab += w * world[size_t(j)].linear();
            bb += w * world[size_t(j)].translation();
        }
        acc += ab * u + bb;
        CHECK((posed.centers.v().row(i).transpose() - acc).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("rasterize: zero splats give background") {
    Tape<double> t;
    CloudLeaves c = makeCloud(t, MatX<double>(0, 3), MatX<double>(0, 4), MatX<double>(0, 3),
                              MatX<double>(0, 1), MatX<double>(0, 3), MatX<double>(0, 2));
    RasterOptions opt;
    opt.h = opt.w = 8;
    RenderVars<double> out = rasterize(t, c.pg, testCam(10, 3.5), opt);
    CHECK(out.rgb.v().cwiseAbs().maxCoeff() == 0.0);
    CHECK(out.mask.v().cwiseAbs().maxCoeff() == 0.0);
    CHECK(out.feat.v().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rasterize: single on-axis splat peak") {
    Tape<double> t;
    MatX<double> pos(1, 3), rot(1, 4), logs(1, 3), opac(1, 1), color(1, 3), feat(1, 2);
    pos << 0.0, 0.0, 2.0;
    rot << 1, 0, 0, 0;
    logs.setConstant(std::log(0.08));
    opac << 0.9;
    color << 0.2, 0.5, 0.8;
    feat << -1.5, 2.5;
    CloudLeaves c = makeCloud(t, pos, rot, logs, opac, color, feat);

    // fx=20, cx=8: the center lands exactly on pixel (8,8) of a 17^2 image.
    RasterOptions opt;
    opt.h = opt.w = 17;
    RenderVars<double> out = rasterize(t, c.pg, testCam(20, 8), opt);
    Index peak = 8 * 17 + 8;
    CHECK((out.rgb.v().row(peak) - 0.9 * color.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(out.mask.v()(peak, 0) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK((out.feat.v().row(peak) - 0.9 * feat.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    // Mass decays away from the peak and the mask stays in range.
    CHECK(out.mask.v().maxCoeff() <= 1.0);
    CHECK(out.mask.v().minCoeff() >= 0.0);
    CHECK(out.mask.v()(0, 0) < 0.9);
}

TEST_CASE("rasterize: two-splat oracle and tie-break") {
    auto render = [&](double z1, double z2, bool reverse = false) {
        Tape<double> t;
        MatX<double> pos(2, 3), rot(2, 4), logs(2, 3), opac(2, 1), color(2, 3), feat(2, 1);
        pos << 0, 0, z1, 0, 0, z2;
        rot << 1, 0, 0, 0, 1, 0, 0, 0;
        logs.setConstant(std::log(0.05));
        opac << 0.7, 0.6;
        color << 1.0, 0.0, 0.2, 0.0, 1.0, 0.4;
        feat << 3.0, -2.0;
        CloudLeaves c = makeCloud(t, pos, rot, logs, opac, color, feat);
        RasterOptions opt;
        opt.h = opt.w = 9;
        opt.reverseOrder = reverse;
        RenderVars<double> out = rasterize(t, c.pg, testCam(8, 4), opt);
        Index peak = 4 * 9 + 4;
        return std::make_pair(MatX<double>(out.rgb.v()), out.rgb.v().row(peak).eval());
    };

    // Both centers hit pixel (4,4) exactly; scales differ in screen space but
    // the center weight is exp(0)=1 for both, so the peak compositing is the
    // pure two-term formula.
    auto [img, peak] = render(1.0, 2.0);
    double a1 = 0.7, a2 = 0.6;
    RowX<double> c1(3), c2(3);
    c1 << 1.0, 0.0, 0.2;
    c2 << 0.0, 1.0, 0.4;
    RowX<double> expected = c1 * a1 + c2 * (a2 * (1 - a1));
    CHECK((peak - expected).cwiseAbs().maxCoeff() < 1e-12);

    // Equal depth: stable tie-break by index keeps Gaussian 0 in front.
    auto [imgTie, peakTie] = render(1.5, 1.5);
    CHECK((peakTie - expected).cwiseAbs().maxCoeff() < 1e-12);

    // Violating the sorted order must change the image.
    auto [imgRev, peakRev] = render(1.0, 2.0, true);
    RowX<double> reversedExpected = c2 * a2 + c1 * (a1 * (1 - a2));
    CHECK((peakRev - reversedExpected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((imgRev - img).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("rasterize: accumulated alpha stays within [0,1] for a dense cloud") {
    Tape<double> t;
    Rng rng = Rng::keyed(123, 0, 0, 0);
    const Index n = 40;
    MatX<double> pos = rng.uniformMat<double>(n, 3, -0.15, 0.15);
    pos.col(2).array() += 1.5;
    MatX<double> rot = rng.gaussian<double>(n, 4);
    MatX<double> logs = rng.uniformMat<double>(n, 3, std::log(0.02), std::log(0.1));
    MatX<double> opacRaw = rng.uniformMat<double>(n, 1, 0.05, 0.98);
    MatX<double> color = rng.uniformMat<double>(n, 3, 0.0, 1.0);
    MatX<double> feat = rng.gaussian<double>(n, 3);
    CloudLeaves c = makeCloud(t, pos, rot, logs, opacRaw, color, feat);

    RasterOptions opt;
    opt.h = opt.w = 32;
    RenderVars<double> out = rasterize(t, c.pg, testCam(40, 15.5), opt);
    CHECK(out.mask.v().minCoeff() >= 0.0);
    CHECK(out.mask.v().maxCoeff() <= 1.0);
    CHECK(out.mask.v().maxCoeff() > 0.5);  // the cloud is actually dense
    CHECK(allFinite(out.rgb.v()));
}

TEST_CASE("rasterize: feature channel composites exactly like rgb") {
    Tape<double> t;
    Rng rng = Rng::keyed(321, 0, 0, 0);
    const Index n = 12;
    MatX<double> pos = rng.uniformMat<double>(n, 3, -0.1, 0.1);
    pos.col(2).array() += 1.2;
    MatX<double> rot = rng.gaussian<double>(n, 4);
    MatX<double> logs = MatX<double>::Constant(n, 3, std::log(0.05));
    MatX<double> opac = rng.uniformMat<double>(n, 1, 0.2, 0.9);
    MatX<double> color = rng.uniformMat<double>(n, 3, 0.0, 1.0);
    CloudLeaves c = makeCloud(t, pos, rot, logs, opac, color, color);  // feature := color

    RasterOptions opt;
    opt.h = opt.w = 24;
    RenderVars<double> out = rasterize(t, c.pg, testCam(30, 11.5), opt);
    CHECK((out.feat.v() - out.rgb.v()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("rasterize: gradients match finite differences in every attribute") {
    Rng rng = Rng::keyed(2718, 0, 0, 0);
    const Index n = 3;
    MatX<double> pos(n, 3);
    pos << 0.013, 0.021, 1.1, -0.035, -0.017, 1.45, 0.028, -0.041, 1.8;
    MatX<double> rot = rng.gaussian<double>(n, 4);
    MatX<double> logs = rng.uniformMat<double>(n, 3, std::log(0.05), std::log(0.12));
    MatX<double> opac(n, 1);
    opac << 0.55, 0.7, 0.4;
    MatX<double> color = rng.uniformMat<double>(n, 3, 0.1, 0.9);
    MatX<double> feat = rng.gaussian<double>(n, 2);

    RasterOptions opt;
    opt.h = opt.w = 16;
    Camera<double> cam = testCam(18, 7.3);
    MatX<double> mixR = Rng::keyed(1, 1, 1, 1).gaussian<double>(Index(opt.h) * opt.w, 3);
    MatX<double> mixM = Rng::keyed(2, 2, 2, 2).gaussian<double>(Index(opt.h) * opt.w, 1);
    MatX<double> mixF = Rng::keyed(3, 3, 3, 3).gaussian<double>(Index(opt.h) * opt.w, 2);

    auto build = [&](Tape<double>& t, std::vector<Var<double>>& v) {
        PosedGaussians<double> pg;
        pg.centers = v[0];
        pg.rotations = v[1];
        pg.logScales = v[2];
        pg.opacities = v[3];
        pg.colors = v[4];
        pg.features = v[5];
        RenderVars<double> out = rasterize(t, pg, cam, opt);
        Var<double> loss = sum(cwiseMul(out.rgb, constant(t, mixR)));
        loss = add(loss, sum(cwiseMul(out.mask, constant(t, mixM))));
        return add(loss, sum(cwiseMul(out.feat, constant(t, mixF))));
    };

    std::vector<MatX<double>> inputs = {pos, rot, logs, opac, color, feat};
    Tape<double> t;
    std::vector<Var<double>> vars;
    for (auto& m : inputs) vars.emplace_back(&t, t.emplace(m, true, nullptr));
    Var<double> loss = build(t, vars);
    t.backward(loss.id);
    std::vector<MatX<double>> grads;
    for (auto& v : vars) {
        REQUIRE(t.hasGrad(v.id));
        grads.push_back(t.grad(v.id));
    }

    auto f = [&](const std::vector<MatX<double>>& in) {
        Tape<double> t2;
        std::vector<Var<double>> vs;
        for (const auto& m : in) vs.emplace_back(&t2, t2.emplace(m, true, nullptr));
        return build(t2, vs).v()(0, 0);
    };
    auto rep = fdCompare<double>(f, inputs, grads, 1e-6);
    CHECK(rep.checked > 0);
    CHECK(rep.maxRel < 1e-3);
}

TEST_CASE("animate-reconstruct chain is deterministic") {
    BodyTemplate<double> tpl = makeTemplate(16, 8, 6, 44);
    ParamStore<double> store;
    Rng rng = Rng::keyed(10, 0, 0, 0);
    ReconConfig cfg;
    cfg.cf = 4;
    ReconNet<double> net(store, cfg, rng);
    MatX<double> tokens = Rng::keyed(6, 6, 6, 6).gaussian<double>(tpl.numVertices(), cfg.tokenWidth);
    PoseShapeParams<double> pose = randomPose(tpl, 12);

    auto run = [&]() {
        Tape<double> t;
        AvatarVars<double> av = net(t, constant(t, tokens), tpl.vertices);
        PosedGaussians<double> pg = animate(t, av, tpl, pose);
        RasterOptions opt;
        opt.h = opt.w = 16;
        Camera<double> cam = testCam(24, 7.5);
        cam.worldToCam.trans = Vec3<double>(0, -0.3, 2.0);
        RenderVars<double> out = rasterize(t, pg, cam, opt);
        return MatX<double>(out.rgb.v());
    };
    CHECK(run() == run());
}
