#pragma once

#include <memory>

#include "visa/geometry/camera.hpp"
#include "visa/recon/animate.hpp"

namespace visa {

struct RasterOptions {
    int h = 64, w = 64;
    double zNear = 0.01;
    double kSigma = 6.0;   // footprint truncation radius, in sigmas
    double pixBlur = 0.1;  // isotropic screen-space dilation of the 2D covariance
    bool reverseOrder = false;  // debug: composite back-to-front instead
    bool wantRgb = true, wantMask = true, wantFeat = true;
};

/// Rendered planes as (h*w) x C tape nodes. Channels that were not requested
/// hold invalid Vars.
template <typename S>
struct RenderVars {
    Var<S> rgb;   // (h*w) x 3
    Var<S> mask;  // (h*w) x 1, accumulated alpha
    Var<S> feat;  // (h*w) x C_f
    int h = 0, w = 0;
};

namespace detail {

/// Saved forward state of one rasterization, shared by the backward closures
/// of the rgb/mask/feature output nodes. Each closure reduces its upstream
/// image gradient to per-Gaussian (mu, Sigma2, opacity, value) gradients and
/// pushes them through the shared projection chain.
template <typename S>
struct RasterState {
    using Mat2 = Eigen::Matrix<S, 2, 2>;
    using Mat23 = Eigen::Matrix<S, 2, 3>;

    RasterOptions opt;
    Camera<S> cam;
    Index n = 0, cf = 0;
    int posId = -1, rotId = -1, scaleId = -1, opacId = -1, colorId = -1, featId = -1;
    bool needGrad = false;

    struct GProj {
        bool inView = false;
        Vec3<S> pc;      // camera-space center
        Vec2<S> mu;      // pixel-space center
        Mat2 sig2, inv;  // screen covariance and inverse
        Mat23 jac;       // projection Jacobian at pc
        Mat3<S> sigC;    // camera-space 3D covariance
        Mat3<S> rq;      // rotation of the (normalized) quaternion
        Vec3<S> s;       // axis scales exp(logScale)
        Vec4<S> qn;
        S qnorm = 1, opac = 0, z = 0;
    };
    std::vector<GProj> g;

    struct Contrib {
        int gi;
        S wgt, d0, d1;
    };
    std::vector<std::vector<Contrib>> pixels;  // front-to-back per pixel

    S alphaOf(const Contrib& c) const { return g[size_t(c.gi)].opac * c.wgt; }

    /// Channel-generic compositing backward. `value(gi)` returns that
    /// Gaussian's channel row (empty for the mask), `gValue` receives
    /// per-Gaussian value gradients (ignored when null).
    void backwardChannel(Tape<S>& tt, const MatX<S>& gImg,
                         const std::function<RowX<S>(int)>& value, MatX<S>* gValue,
                         MatX<S>& gMu, std::vector<Mat2>& gSig2, VecX<S>& gOpac) const {
        const Index hw = Index(opt.h) * opt.w;
        for (Index p = 0; p < hw; ++p) {
            const auto& list = pixels[size_t(p)];
            if (list.empty()) continue;
            RowX<S> gRow = gImg.row(p);
            if (gRow.cwiseAbs().maxCoeff() == S(0)) continue;
            // Recompute transmittances front-to-back.
            std::vector<S> alpha(list.size()), trans(list.size());
            S t = S(1);
            for (size_t k = 0; k < list.size(); ++k) {
                alpha[k] = alphaOf(list[k]);
                trans[k] = t;
                t *= (S(1) - alpha[k]);
            }
            // Back-to-front: accumulate the suffix sum of v_j a_j T_j.
            RowX<S> suffix = RowX<S>::Zero(gRow.size());
            for (size_t k = list.size(); k-- > 0;) {
                const Contrib& c = list[k];
                RowX<S> v = value ? value(c.gi) : RowX<S>::Ones(1);
                S gAlpha = gRow.dot(v * trans[k] - suffix / (S(1) - alpha[k]));
                if (gValue) gValue->row(c.gi) += alpha[k] * trans[k] * gRow;
                suffix += v * (alpha[k] * trans[k]);

                const GProj& gp = g[size_t(c.gi)];
                S gW = gp.opac * gAlpha;
                gOpac(c.gi) += c.wgt * gAlpha;
                S gQform = S(-0.5) * c.wgt * gW;
                Vec2<S> d(c.d0, c.d1);
                Vec2<S> invD = gp.inv * d;
                gMu.row(c.gi) -= (S(2) * gQform * invD).transpose();
                gSig2[size_t(c.gi)] -= gQform * invD * invD.transpose();
            }
        }
    }

    /// Per-Gaussian (mu, Sigma2, opacity) gradients -> input tape nodes.
    void pushProjectionGrads(Tape<S>& tt, const MatX<S>& gMu, const std::vector<Mat2>& gSig2,
                             const VecX<S>& gOpac, MatX<S>* gColor, MatX<S>* gFeat) const {
        MatX<S> gPos = MatX<S>::Zero(n, 3);
        MatX<S> gRot = MatX<S>::Zero(n, 4);
        MatX<S> gScale = MatX<S>::Zero(n, 3);
        const Mat3<S>& rc = cam.worldToCam.rot;
        for (Index i = 0; i < n; ++i) {
            const GProj& gp = g[size_t(i)];
            if (!gp.inView) continue;
            const Mat2& gS2 = gSig2[size_t(i)];
            Vec2<S> gMuRow = gMu.row(i).transpose();
            if (gS2.cwiseAbs().maxCoeff() == S(0) && gMuRow.cwiseAbs().maxCoeff() == S(0))
                continue;
            // Sigma2 = J SigC J^T + blur; mu = project(pc).
            Mat23 gJ = S(2) * gS2 * gp.jac * gp.sigC;
            Mat3<S> gSigC = gp.jac.transpose() * gS2 * gp.jac;
            Vec3<S> gPc = gp.jac.transpose() * gMuRow;
            S x = gp.pc.x(), y = gp.pc.y(), z = gp.pc.z();
            S iz2 = S(1) / (z * z), iz3 = iz2 / z;
            gPc.x() += gJ(0, 2) * (-cam.fx * iz2);
            gPc.y() += gJ(1, 2) * (-cam.fy * iz2);
            gPc.z() += gJ(0, 0) * (-cam.fx * iz2) + gJ(1, 1) * (-cam.fy * iz2) +
                       gJ(0, 2) * (S(2) * cam.fx * x * iz3) + gJ(1, 2) * (S(2) * cam.fy * y * iz3);
            gPos.row(i) = (rc.transpose() * gPc).transpose();
            // SigC = Rc SigW Rc^T; SigW = Rq diag(s^2) Rq^T.
            Mat3<S> gSigW = rc.transpose() * gSigC * rc;
            Mat3<S> d2 = gp.s.array().square().matrix().asDiagonal();
            Mat3<S> gRq = S(2) * gSigW * gp.rq * d2;
            Mat3<S> inner = gp.rq.transpose() * gSigW * gp.rq;
            for (int k = 0; k < 3; ++k)
                gScale(i, k) = inner(k, k) * S(2) * gp.s(k) * gp.s(k);
            Vec4<S> gQn = quatToMatBackward(gp.qn, gRq);
            gRot.row(i) = ((gQn - gp.qn * gp.qn.dot(gQn)) / gp.qnorm).transpose();
        }
        tt.accumulate(posId, gPos);
        tt.accumulate(rotId, gRot);
        tt.accumulate(scaleId, gScale);
        tt.accumulate(opacId, MatX<S>(gOpac));
        if (gColor) tt.accumulate(colorId, *gColor);
        if (gFeat) tt.accumulate(featId, *gFeat);
    }
};

}  // namespace detail

/// Perspective EWA splatting with front-to-back alpha compositing.
/// C(p) = sum_i v_i a_i prod_{j<i} (1 - a_j), a_i = opacity_i * exp(-q/2).
/// Depth order is camera z with a stable index tie-break. Differentiable in
/// every Gaussian attribute, including centers through the projection
/// Jacobian.
template <typename S>
RenderVars<S> rasterize(Tape<S>& t, const PosedGaussians<S>& pg, const Camera<S>& cam,
                        const RasterOptions& opt) {
    using Mat2 = Eigen::Matrix<S, 2, 2>;
    cam.validate();
    check(opt.h > 0 && opt.w > 0, "rasterize: empty output");
    const Index n = pg.count();
    const Index hw = Index(opt.h) * opt.w;
    const Index cf = pg.features.valid() ? pg.features.cols() : 0;

    auto st = std::make_shared<detail::RasterState<S>>();
    st->opt = opt;
    st->cam = cam;
    st->n = n;
    st->cf = cf;
    st->posId = pg.centers.id;
    st->rotId = pg.rotations.id;
    st->scaleId = pg.logScales.id;
    st->opacId = pg.opacities.id;
    st->colorId = pg.colors.id;
    st->featId = pg.features.valid() ? pg.features.id : -1;
    st->g.resize(size_t(n));
    st->pixels.resize(size_t(hw));

    const S kCut = S(opt.kSigma * opt.kSigma);
    for (Index i = 0; i < n; ++i) {
        auto& gp = st->g[size_t(i)];
        Vec4<S> qraw = pg.rotations.v().row(i).transpose();
        gp.qnorm = qraw.norm();
        check(gp.qnorm > S(1e-8), "rasterize: zero quaternion");
        gp.qn = qraw / gp.qnorm;
        gp.rq = quatToMat(gp.qn);
        gp.s = pg.logScales.v().row(i).array().exp().matrix().transpose();
        gp.opac = pg.opacities.v()(i, 0);
        Vec3<S> p = pg.centers.v().row(i).transpose();
        gp.pc = cam.toCam(p);
        gp.z = gp.pc.z();
        if (gp.z < S(opt.zNear)) continue;
        gp.jac = cam.pixelJacobian(gp.pc);
        Mat3<S> sigW = gp.rq * gp.s.array().square().matrix().asDiagonal() * gp.rq.transpose();
        gp.sigC = cam.worldToCam.rot * sigW * cam.worldToCam.rot.transpose();
        gp.sig2 = gp.jac * gp.sigC * gp.jac.transpose() + S(opt.pixBlur) * Mat2::Identity();
        S det = gp.sig2.determinant();
        if (det <= S(0)) continue;
        gp.inv = gp.sig2.inverse();
        gp.mu = cam.pixelOf(gp.pc);
        gp.inView = true;

        S a = gp.sig2(0, 0), b = gp.sig2(0, 1), c = gp.sig2(1, 1);
        S lmax = (a + c) / 2 + std::sqrt(std::max(S(0), ((a - c) / 2) * ((a - c) / 2) + b * b));
        S r = S(opt.kSigma) * std::sqrt(lmax);
        int x0 = std::max(0, int(std::ceil(double(gp.mu.x() - r))));
        int x1 = std::min(opt.w - 1, int(std::floor(double(gp.mu.x() + r))));
        int y0 = std::max(0, int(std::ceil(double(gp.mu.y() - r))));
        int y1 = std::min(opt.h - 1, int(std::floor(double(gp.mu.y() + r))));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                Vec2<S> d(S(x) - gp.mu.x(), S(y) - gp.mu.y());
                S q = d.dot(gp.inv * d);
                if (q > kCut) continue;
                S wgt = std::exp(S(-0.5) * q);
                if (gp.opac * wgt < S(1e-12)) continue;
                st->pixels[size_t(y) * opt.w + x].push_back({int(i), wgt, d.x(), d.y()});
            }
        }
    }

    for (auto& list : st->pixels) {
        std::stable_sort(list.begin(), list.end(), [&](const auto& a, const auto& b) {
            S za = st->g[size_t(a.gi)].z, zb = st->g[size_t(b.gi)].z;
            if (za != zb) return opt.reverseOrder ? za > zb : za < zb;
            return opt.reverseOrder ? a.gi > b.gi : a.gi < b.gi;
        });
    }

    // Forward compositing.
    MatX<S> rgb = MatX<S>::Zero(hw, 3);
    MatX<S> mask = MatX<S>::Zero(hw, 1);
    MatX<S> feat = MatX<S>::Zero(hw, std::max<Index>(cf, 1));
    for (Index p = 0; p < hw; ++p) {
        S trans = S(1);
        for (const auto& c : st->pixels[size_t(p)]) {
            S a = st->alphaOf(c);
            S w = a * trans;
            rgb.row(p) += w * pg.colors.v().row(c.gi);
            mask(p, 0) += w;
            if (cf > 0) feat.row(p) += w * pg.features.v().row(c.gi);
            trans *= (S(1) - a);
        }
    }

    bool rg = pg.centers.rg() || pg.rotations.rg() || pg.logScales.rg() || pg.opacities.rg() ||
              pg.colors.rg() || (pg.features.valid() && pg.features.rg());
    st->needGrad = rg;

    RenderVars<S> out;
    out.h = opt.h;
    out.w = opt.w;
    auto makeNode = [&](MatX<S> img, int kind) {  // 0 rgb, 1 mask, 2 feat
        int id = t.emplace(std::move(img), rg, [st, kind](Tape<S>& tt, int self) {
            const MatX<S>& gImg = tt.grad(self);
            MatX<S> gMu = MatX<S>::Zero(st->n, 2);
            std::vector<typename detail::RasterState<S>::Mat2> gSig2(
                size_t(st->n), detail::RasterState<S>::Mat2::Zero());
            VecX<S> gOpac = VecX<S>::Zero(st->n);
            MatX<S> gVal;
            std::function<RowX<S>(int)> value;
            if (kind == 0) {
                gVal = MatX<S>::Zero(st->n, 3);
                value = [&tt, st](int gi) -> RowX<S> { return tt.val(st->colorId).row(gi); };
            } else if (kind == 2) {
                gVal = MatX<S>::Zero(st->n, st->cf);
                value = [&tt, st](int gi) -> RowX<S> { return tt.val(st->featId).row(gi); };
            }
            st->backwardChannel(tt, gImg, value, kind == 1 ? nullptr : &gVal, gMu, gSig2, gOpac);
            st->pushProjectionGrads(tt, gMu, gSig2, gOpac, kind == 0 ? &gVal : nullptr,
                                    kind == 2 ? &gVal : nullptr);
        });
        return Var<S>(&t, id);
    };
    if (opt.wantRgb) out.rgb = makeNode(std::move(rgb), 0);
    if (opt.wantMask) out.mask = makeNode(std::move(mask), 1);
    if (opt.wantFeat && cf > 0) out.feat = makeNode(std::move(feat), 2);
    return out;
}

}  // namespace visa
