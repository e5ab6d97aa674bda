#pragma once

#include "visa/geometry/body_template.hpp"

namespace visa {

/// Quaternions are (w, x, y, z) rows.
template <typename S>
Vec4<S> quatMul(const Vec4<S>& a, const Vec4<S>& b) {
    return Vec4<S>(a(0) * b(0) - a(1) * b(1) - a(2) * b(2) - a(3) * b(3),
                   a(0) * b(1) + a(1) * b(0) + a(2) * b(3) - a(3) * b(2),
                   a(0) * b(2) - a(1) * b(3) + a(2) * b(0) + a(3) * b(1),
                   a(0) * b(3) + a(1) * b(2) - a(2) * b(1) + a(3) * b(0));
}

template <typename S>
Vec4<S> normalizeQuat(const Vec4<S>& q) {
    S n = q.norm();
    check(n > S(1e-8), "quaternion too close to zero to normalize");
    return q / n;
}

/// Rotation matrix of a unit quaternion.
template <typename S>
Mat3<S> quatToMat(const Vec4<S>& q) {
    S w = q(0), x = q(1), y = q(2), z = q(3);
    Mat3<S> r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// d(vec R)/dq of quatToMat at a unit quaternion, contracted with an
/// upstream matrix gradient: returns gbar_q given gbar_R.
template <typename S>
Vec4<S> quatToMatBackward(const Vec4<S>& q, const Mat3<S>& gr) {
    S w = q(0), x = q(1), y = q(2), z = q(3);
    Mat3<S> dw, dx, dy, dz;
    dw << 0, -z, y, z, 0, -x, -y, x, 0;
    dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    return S(2) * Vec4<S>(gr.cwiseProduct(dw).sum(), gr.cwiseProduct(dx).sum(),
                          gr.cwiseProduct(dy).sum(), gr.cwiseProduct(dz).sum());
}

template <typename S>
struct PoseShapeParams {
    MatX<S> quats;      // J x 4 local joint rotations
    Vec3<S> translation = Vec3<S>::Zero();
    VecX<S> shape;      // S coefficients
    VecX<S> expr;       // E coefficients

    static PoseShapeParams rest(const BodyTemplate<S>& tpl) {
        PoseShapeParams p;
        p.quats = MatX<S>::Zero(tpl.numJoints(), 4);
        p.quats.col(0).setOnes();
        p.shape = VecX<S>::Zero(tpl.numShape());
        p.expr = VecX<S>::Zero(tpl.numExpr());
        return p;
    }

    void validate(const BodyTemplate<S>& tpl) const {
        check(quats.rows() == tpl.numJoints() && quats.cols() == 4,
              "pose: quats must be Jx4");
        check(shape.size() == tpl.numShape() && expr.size() == tpl.numExpr(),
              "pose: basis coefficient sizes must match the template");
        for (Index j = 0; j < quats.rows(); ++j)
            check(std::abs(double(quats.row(j).norm()) - 1.0) < 1e-6,
                  "pose: joint quaternion must be unit norm");
        check(allFinite(quats) && translation.allFinite(), "pose: non-finite parameters");
    }

    template <typename T>
    PoseShapeParams<T> cast() const {
        PoseShapeParams<T> p;
        p.quats = quats.template cast<T>();
        p.translation = translation.template cast<T>();
        p.shape = shape.template cast<T>();
        p.expr = expr.template cast<T>();
        return p;
    }
};

template <typename S>
struct FkResult {
    std::vector<Mat3<S>> rotW;  // world rotation per joint
    MatX<S> transW;             // J x 3 world translation per joint (affine part)
    MatX<S> quatLocal;          // J x 4 normalized local quaternions
    MatX<S> quatW;              // J x 4 world quaternions
    MatX<S> posedJoints;        // J x 3, includes the global translation
};

/// Chains local joint rotations about their rest pivots:
///   A_root(p) = R_0 (p - g_0) + g_0,  A_j = A_parent ∘ L_j.
template <typename S>
FkResult<S> forwardKinematics(const BodyTemplate<S>& tpl, const PoseShapeParams<S>& params) {
    Index nj = tpl.numJoints();
    check(params.quats.rows() == nj && params.quats.cols() == 4, "fk: quats must be Jx4");
    FkResult<S> fk;
    fk.rotW.resize(size_t(nj));
    fk.transW.resize(nj, 3);
    fk.quatLocal.resize(nj, 4);
    fk.quatW.resize(nj, 4);
    fk.posedJoints.resize(nj, 3);
    for (Index j = 0; j < nj; ++j) {
        Vec4<S> qn = normalizeQuat<S>(params.quats.row(j).transpose());
        fk.quatLocal.row(j) = qn.transpose();
        Mat3<S> rl = quatToMat(qn);
        Vec3<S> g = tpl.joints.row(j).transpose();
        int par = tpl.parents[size_t(j)];
        if (par < 0) {
            fk.rotW[size_t(j)] = rl;
            fk.transW.row(j) = (g - rl * g).transpose();
            fk.quatW.row(j) = qn.transpose();
        } else {
            fk.rotW[size_t(j)] = fk.rotW[size_t(par)] * rl;
            fk.transW.row(j) =
                (fk.rotW[size_t(par)] * (g - rl * g) + Vec3<S>(fk.transW.row(par).transpose()))
                    .transpose();
            fk.quatW.row(j) =
                quatMul<S>(fk.quatW.row(par).transpose(), qn).transpose();
        }
        fk.posedJoints.row(j) = (fk.rotW[size_t(j)] * g + Vec3<S>(fk.transW.row(j).transpose()) +
                                 params.translation)
                                    .transpose();
    }
    return fk;
}

/// Rest vertices displaced by the linear shape and expression bases.
template <typename S>
MatX<S> canonicalVertices(const BodyTemplate<S>& tpl, const PoseShapeParams<S>& params) {
    MatX<S> u = tpl.vertices;
    for (Index s = 0; s < tpl.numShape(); ++s) u += params.shape(s) * tpl.shapeBasis[size_t(s)];
    for (Index e = 0; e < tpl.numExpr(); ++e) u += params.expr(e) * tpl.exprBasis[size_t(e)];
    return u;
}

template <typename S>
struct LbsForward {
    MatX<S> canonical;  // N x 3 shaped rest vertices
    MatX<S> posed;      // N x 3 skinned vertices
    FkResult<S> fk;
};

/// Linear blend skinning: v_i = sum_j w_ij (R^w_j u_i + t^w_j) + t_global.
template <typename S>
LbsForward<S> lbsPose(const BodyTemplate<S>& tpl, const PoseShapeParams<S>& params) {
    LbsForward<S> out;
    out.fk = forwardKinematics(tpl, params);
    out.canonical = canonicalVertices(tpl, params);
    Index n = tpl.numVertices(), nj = tpl.numJoints();
    out.posed.resize(n, 3);
    for (Index i = 0; i < n; ++i) {
        Vec3<S> u = out.canonical.row(i).transpose();
        Vec3<S> acc = params.translation;
        for (Index j = 0; j < nj; ++j) {
            S w = tpl.weights(i, j);
            if (w == S(0)) continue;
            acc += w * (out.fk.rotW[size_t(j)] * u + Vec3<S>(out.fk.transW.row(j).transpose()));
        }
        out.posed.row(i) = acc.transpose();
    }
    return out;
}

template <typename S>
struct LbsGrads {
    MatX<S> quats;  // J x 4, w.r.t. the raw (pre-normalization) quaternions
    Vec3<S> translation = Vec3<S>::Zero();
    VecX<S> shape;
    VecX<S> expr;
};

/// Reverse-mode of lbsPose. `gradPosed` (N x 3) and `gradJoints` (J x 3) are
/// upstream gradients for the skinned vertices and the posed joints; either
/// may be empty (size 0).
template <typename S>
LbsGrads<S> lbsBackward(const BodyTemplate<S>& tpl, const PoseShapeParams<S>& params,
                        const LbsForward<S>& fwd, const MatX<S>& gradPosed,
                        const MatX<S>& gradJoints) {
    Index n = tpl.numVertices(), nj = tpl.numJoints();
    bool hasV = gradPosed.size() > 0, hasJ = gradJoints.size() > 0;
    if (hasV) check(gradPosed.rows() == n && gradPosed.cols() == 3, "lbsBackward: bad vertex grad");
    if (hasJ)
        check(gradJoints.rows() == nj && gradJoints.cols() == 3, "lbsBackward: bad joint grad");

    LbsGrads<S> g;
    g.quats = MatX<S>::Zero(nj, 4);
    g.shape = VecX<S>::Zero(tpl.numShape());
    g.expr = VecX<S>::Zero(tpl.numExpr());

    std::vector<Mat3<S>> gRotW(size_t(nj), Mat3<S>::Zero());
    MatX<S> gTransW = MatX<S>::Zero(nj, 3);
    MatX<S> gCanon = MatX<S>::Zero(n, 3);

    if (hasV) {
        for (Index i = 0; i < n; ++i) {
            Vec3<S> gv = gradPosed.row(i).transpose();
            Vec3<S> u = fwd.canonical.row(i).transpose();
            g.translation += gv;
            for (Index j = 0; j < nj; ++j) {
                S w = tpl.weights(i, j);
                if (w == S(0)) continue;
                gRotW[size_t(j)] += w * gv * u.transpose();
                gTransW.row(j) += (w * gv).transpose();
                gCanon.row(i) += (w * (fwd.fk.rotW[size_t(j)].transpose() * gv)).transpose();
            }
        }
    }
    if (hasJ) {
        for (Index j = 0; j < nj; ++j) {
            Vec3<S> gp = gradJoints.row(j).transpose();
            Vec3<S> gj = tpl.joints.row(j).transpose();
            g.translation += gp;
            gRotW[size_t(j)] += gp * gj.transpose();
            gTransW.row(j) += gp.transpose();
        }
    }

    // Walk the chain leaves-first, pushing world-frame gradients onto the
    // parent and the local rotation.
    for (Index j = nj - 1; j >= 0; --j) {
        Vec3<S> gj = tpl.joints.row(j).transpose();
        Vec4<S> qn = fwd.fk.quatLocal.row(j).transpose();
        Mat3<S> rl = quatToMat(qn);
        Vec3<S> gt = gTransW.row(j).transpose();
        int par = tpl.parents[size_t(j)];
        Mat3<S> rPar = par < 0 ? Mat3<S>::Identity() : fwd.fk.rotW[size_t(par)];
        Mat3<S> gRl = rPar.transpose() * gRotW[size_t(j)];
        gRl += -(rPar.transpose() * gt) * gj.transpose();
        if (par >= 0) {
            gRotW[size_t(par)] += gRotW[size_t(j)] * rl.transpose();
            gRotW[size_t(par)] += gt * (gj - rl * gj).transpose();
            gTransW.row(par) += gt.transpose();
        }
        Vec4<S> gQn = quatToMatBackward(qn, gRl);
        // Through normalization: q_n = q/|q|.
        Vec4<S> q = params.quats.row(j).transpose();
        S norm = q.norm();
        g.quats.row(j) += ((gQn - qn * qn.dot(gQn)) / norm).transpose();
    }

    // Canonical vertices feed the shape/expression coefficients.
    for (Index s = 0; s < tpl.numShape(); ++s)
        g.shape(s) = gCanon.cwiseProduct(tpl.shapeBasis[size_t(s)]).sum();
    for (Index e = 0; e < tpl.numExpr(); ++e)
        g.expr(e) = gCanon.cwiseProduct(tpl.exprBasis[size_t(e)]).sum();
    return g;
}

/// Per-vertex blended rotation for rigid feature transport: sign-aligned
/// weighted sum of world quaternions, renormalized. Weights follow the
/// skinning row; alignment is against the dominant joint's quaternion.
template <typename S>
Vec4<S> blendWorldQuat(const MatX<S>& weights, Index vertex, const MatX<S>& quatW) {
    Index nj = weights.cols();
    Index dom = 0;
    weights.row(vertex).maxCoeff(&dom);
    Vec4<S> ref = quatW.row(dom).transpose();
    Vec4<S> acc = Vec4<S>::Zero();
    for (Index j = 0; j < nj; ++j) {
        S w = weights(vertex, j);
        if (w == S(0)) continue;
        Vec4<S> q = quatW.row(j).transpose();
        if (q.dot(ref) < S(0)) q = -q;
        acc += w * q;
    }
    return normalizeQuat(acc);
}

}  // namespace visa
