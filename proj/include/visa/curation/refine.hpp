#pragma once

#include "visa/core/adam.hpp"
#include "visa/curation/clip.hpp"

#include <vector>

namespace visa {

struct RefineOptions {
    int iters = 200;
    double lr = 0.02;
    int maxBacktracks = 8;
    double divergenceFactor = 10.0;
};

struct RefineResult {
    std::vector<PoseShapeParams<double>> params;  // refined, quats normalized
    double initialError = 0.0;                    // RMS px
    double finalError = 0.0;                      // RMS px
    std::vector<double> trace;                    // accepted per-iteration RMS px
    bool diverged = false;
};

namespace detail {

/// Mean squared pixel reprojection error of posed joints against the
/// frame's keypoints, plus its gradient w.r.t. the pose parameters.
inline double reprojObjective(const BodyTemplate<double>& tpl, const Camera<double>& cam,
                              const PoseShapeParams<double>& p, const MatX<double>& target,
                              LbsGrads<double>* grads) {
    LbsForward<double> fwd = lbsPose(tpl, p);
    Index nj = tpl.numJoints();
    MatX<double> gradJoints = MatX<double>::Zero(nj, 3);
    double err = 0.0;
    for (Index j = 0; j < nj; ++j) {
        Vec3<double> pc = cam.toCam(fwd.fk.posedJoints.row(j).transpose());
        Vec2<double> px = cam.pixelOf(pc);
        Vec2<double> d(px.x() - target(j, 0), px.y() - target(j, 1));
        err += d.squaredNorm();
        if (grads) {
            Eigen::Matrix<double, 2, 3> jac = cam.pixelJacobian(pc) * cam.worldToCam.rot;
            gradJoints.row(j) = (2.0 / double(nj)) * (jac.transpose() * d).transpose();
        }
    }
    err /= double(nj);
    if (grads) *grads = lbsBackward(tpl, p, fwd, MatX<double>(), gradJoints);
    return err;
}

}  // namespace detail

/// Per-frame reprojection refinement: adaptive-moment descent on pose, shape
/// and expression with backtracking, so the accepted error trace never
/// increases. Returns normalized quaternions.
inline RefineResult refineParams(const BodyTemplate<double>& tpl, const ClipRecord& clip,
                                 const std::vector<PoseShapeParams<double>>& init,
                                 const RefineOptions& opt = {}) {
    clip.validate();
    check(int(init.size()) == clip.frameCount, "refine: one init pose per frame required");
    RefineResult res;
    res.params = init;
    res.trace.assign(size_t(opt.iters) + 1, 0.0);

    double init2 = 0.0, final2 = 0.0;
    for (int f = 0; f < clip.frameCount; ++f) {
        PoseShapeParams<double>& p = res.params[size_t(f)];
        const MatX<double>& target = clip.keypoints[size_t(f)];

        ParamStore<double> store;
        Parameter<double>& quats = store.add("quats", p.quats);
        Parameter<double>& trans = store.add("trans", MatX<double>(p.translation.transpose()));
        Parameter<double>& shape = store.add("shape", MatX<double>(p.shape.transpose()));
        Parameter<double>& expr = store.add("expr", MatX<double>(p.expr.transpose()));
        typename Adam<double>::Options aopt;
        aopt.lr = opt.lr;
        aopt.clipNorm = 0;  // error-controlled via backtracking instead
        Adam<double> adam({&quats, &trans, &shape, &expr}, aopt);

        auto pull = [&](PoseShapeParams<double>& out) {
            out.quats = quats.value;
            out.translation = Vec3<double>(trans.value.transpose());
            out.shape = VecX<double>(shape.value.transpose());
            out.expr = VecX<double>(expr.value.transpose());
        };

        double err = detail::reprojObjective(tpl, clip.camera, p, target, nullptr);
        init2 += err;
        res.trace[0] += err;

        for (int it = 0; it < opt.iters; ++it) {
            LbsGrads<double> g;
            detail::reprojObjective(tpl, clip.camera, p, target, &g);
            quats.grad = g.quats;
            trans.grad = g.translation.transpose();
            shape.grad = g.shape.transpose();
            expr.grad = g.expr.transpose();

            // snapshot for backtracking
            auto vals = std::make_tuple(quats.value, trans.value, shape.value, expr.value);
            auto m1 = adam.moment1();
            auto m2 = adam.moment2();
            long tc = adam.stepCount();
            double lrScale = 1.0;
            bool accepted = false;
            for (int bt = 0; bt <= opt.maxBacktracks; ++bt) {
                adam.options().lr = opt.lr * lrScale;
                adam.step();
                pull(p);
                double cand = detail::reprojObjective(tpl, clip.camera, p, target, nullptr);
                if (cand <= err) {
                    err = cand;
                    accepted = true;
                    break;
                }
                std::tie(quats.value, trans.value, shape.value, expr.value) = vals;
                adam.moment1() = m1;
                adam.moment2() = m2;
                adam.setStepCount(tc);
                lrScale *= 0.5;
            }
            if (!accepted) pull(p);  // restored snapshot; error unchanged
            res.trace[size_t(it) + 1] += err;
        }
        final2 += err;
        for (Index j = 0; j < tpl.numJoints(); ++j)
            p.quats.row(j) = normalizeQuat<double>(p.quats.row(j).transpose()).transpose();
    }

    for (double& v : res.trace) v = std::sqrt(v / double(clip.frameCount));
    res.initialError = res.trace.front();
    res.finalError = res.trace.back();
    res.diverged = res.finalError > opt.divergenceFactor * std::max(res.initialError, 1e-12);
    return res;
}

}  // namespace visa
