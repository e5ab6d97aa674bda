#pragma once

#include "visa/geometry/lbs.hpp"
#include "visa/recon/gaussians.hpp"

namespace visa {

/// Splat cloud after posing; scales/opacities/colors/features are shared
/// handles with the canonical avatar (rigid transport leaves them unchanged).
template <typename S>
struct PosedGaussians {
    Var<S> centers;    // N x 3 world
    Var<S> rotations;  // N x 4 unit quaternions, world
    Var<S> logScales;
    Var<S> opacities;
    Var<S> colors;
    Var<S> features;

    Index count() const { return centers.rows(); }
};

/// Applies per-vertex affine skinning rows: out_i = A_i x_i + b_i.
/// The transforms are pose data, not trainable: gradients flow to x only.
template <typename S>
Var<S> skinPoints(Var<S> x, std::shared_ptr<std::vector<Mat3<S>>> rots, MatX<S> offsets) {
    Tape<S>& t = *x.tape;
    Index n = x.rows();
    check(x.cols() == 3 && Index(rots->size()) == n && offsets.rows() == n,
          "skinPoints: shape mismatch");
    MatX<S> out(n, 3);
    for (Index i = 0; i < n; ++i)
        out.row(i) = ((*rots)[size_t(i)] * Vec3<S>(x.v().row(i).transpose())).transpose() +
                     offsets.row(i);
    int xid = x.id;
    int id = t.emplace(std::move(out), x.rg(), [xid, rots, n](Tape<S>& tt, int self) {
        const MatX<S>& g = tt.grad(self);
        MatX<S> gx(n, 3);
        for (Index i = 0; i < n; ++i)
            gx.row(i) = ((*rots)[size_t(i)].transpose() * Vec3<S>(g.row(i).transpose())).transpose();
        tt.accumulate(xid, gx);
    });
    return Var<S>(&t, id);
}

/// Left-multiplies each row quaternion by a fixed quaternion: out_i = c_i ⊗ q_i.
template <typename S>
Var<S> quatLeftMul(Var<S> q, MatX<S> left) {
    Tape<S>& t = *q.tape;
    Index n = q.rows();
    check(q.cols() == 4 && left.rows() == n && left.cols() == 4, "quatLeftMul: shape mismatch");
    MatX<S> out(n, 4);
    for (Index i = 0; i < n; ++i)
        out.row(i) = quatMul<S>(left.row(i).transpose(), q.v().row(i).transpose()).transpose();
    int qid = q.id;
    auto lmat = std::make_shared<MatX<S>>(std::move(left));
    int id = t.emplace(std::move(out), q.rg(), [qid, lmat, n](Tape<S>& tt, int self) {
        const MatX<S>& g = tt.grad(self);
        MatX<S> gq(n, 4);
        for (Index i = 0; i < n; ++i) {
            S w = (*lmat)(i, 0), x = (*lmat)(i, 1), y = (*lmat)(i, 2), z = (*lmat)(i, 3);
            Eigen::Matrix<S, 4, 4> l;  // left-multiplication matrix of c_i
            l << w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w;
            gq.row(i) = (l.transpose() * Vec4<S>(g.row(i).transpose())).transpose();
        }
        tt.accumulate(qid, gq);
    });
    return Var<S>(&t, id);
}

/// Poses the canonical avatar: centers ride the skinning field of their
/// binding vertex (shape/expression displacements included), rotations are
/// left-multiplied by the blended world rotation of the binding vertex.
template <typename S>
PosedGaussians<S> animate(Tape<S>& t, const AvatarVars<S>& avatar, const BodyTemplate<S>& tpl,
                          const PoseShapeParams<S>& params) {
    Index n = avatar.count();
    check(n == tpl.numVertices(), "animate: one Gaussian per vertex required");
    params.validate(tpl);
    FkResult<S> fk = forwardKinematics(tpl, params);

    // Canonical -> shaped canonical: add the pose's shape/expression offsets
    // of the binding vertex (constant w.r.t. the tape).
    MatX<S> shapeDelta = canonicalVertices(tpl, params) - tpl.vertices;
    Var<S> shaped = add(avatar.positions, constant(t, shapeDelta));

    auto rots = std::make_shared<std::vector<Mat3<S>>>(static_cast<size_t>(n));
    MatX<S> offsets(n, 3);
    MatX<S> blendQ(n, 4);
    for (Index i = 0; i < n; ++i) {
        Mat3<S> a = Mat3<S>::Zero();
        Vec3<S> b = params.translation;
        for (Index j = 0; j < tpl.numJoints(); ++j) {
            S w = tpl.weights(i, j);
            if (w == S(0)) continue;
            a += w * fk.rotW[size_t(j)];
            b += w * Vec3<S>(fk.transW.row(j).transpose());
        }
        (*rots)[size_t(i)] = a;
        offsets.row(i) = b.transpose();
        blendQ.row(i) = blendWorldQuat(tpl.weights, i, fk.quatW).transpose();
    }

    PosedGaussians<S> out;
    out.centers = skinPoints(shaped, rots, std::move(offsets));
    out.rotations = quatLeftMul(avatar.rotations, std::move(blendQ));
    out.logScales = avatar.logScales;
    out.opacities = avatar.opacities;
    out.colors = avatar.colors;
    out.features = avatar.features;
    return out;
}

}  // namespace visa
