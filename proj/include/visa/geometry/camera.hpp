#pragma once

#include "visa/core/matrix.hpp"

namespace visa {

template <typename S>
struct RigidTransform {
    Mat3<S> rot = Mat3<S>::Identity();
    Vec3<S> trans = Vec3<S>::Zero();

    Vec3<S> apply(const Vec3<S>& p) const { return rot * p + trans; }

    RigidTransform composedWith(const RigidTransform& inner) const {
        // (this ∘ inner)(p) = this(inner(p))
        return {rot * inner.rot, rot * inner.trans + trans};
    }

    RigidTransform inverse() const { return {rot.transpose(), -(rot.transpose() * trans)}; }
};

/// Pinhole camera: x_cam = R x_world + t, pixel = (fx x/z + cx, fy y/z + cy),
/// depth = camera-space z.
template <typename S>
struct Camera {
    S fx = S(96), fy = S(96), cx = S(32), cy = S(32);
    RigidTransform<S> worldToCam;

    void validate() const { check(fx > S(0) && fy > S(0), "camera: focal lengths must be positive"); }

    Vec3<S> toCam(const Vec3<S>& pw) const { return worldToCam.apply(pw); }

    Vec2<S> pixelOf(const Vec3<S>& pc) const {
        return Vec2<S>(fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy);
    }

    /// Jacobian of pixel w.r.t. the camera-space point.
    Eigen::Matrix<S, 2, 3> pixelJacobian(const Vec3<S>& pc) const {
        S iz = S(1) / pc.z();
        Eigen::Matrix<S, 2, 3> j;
        j << fx * iz, S(0), -fx * pc.x() * iz * iz, S(0), fy * iz, -fy * pc.y() * iz * iz;
        return j;
    }

    /// Re-expresses this camera after the world is moved by `rigid`: the
    /// composed camera maps transformed world points to the same pixels.
    Camera transformedWorld(const RigidTransform<S>& rigid) const {
        Camera out = *this;
        out.worldToCam = worldToCam.composedWith(rigid.inverse());
        return out;
    }

    template <typename T>
    Camera<T> cast() const {
        Camera<T> out;
        out.fx = T(fx);
        out.fy = T(fy);
        out.cx = T(cx);
        out.cy = T(cy);
        out.worldToCam.rot = worldToCam.rot.template cast<T>();
        out.worldToCam.trans = worldToCam.trans.template cast<T>();
        return out;
    }
};

/// Projects world points; depth is camera-space z (negative depth flags a
/// point behind the camera; the pixel is still reported).
template <typename S>
void project(const MatX<S>& pointsWorld, const Camera<S>& cam, MatX<S>& pixels, VecX<S>& depths) {
    cam.validate();
    check(pointsWorld.cols() == 3, "project: points must be Nx3");
    Index n = pointsWorld.rows();
    pixels.resize(n, 2);
    depths.resize(n);
    for (Index i = 0; i < n; ++i) {
        Vec3<S> pc = cam.toCam(Vec3<S>(pointsWorld.row(i).transpose()));
        depths(i) = pc.z();
        Vec2<S> px = cam.pixelOf(pc);
        pixels(i, 0) = px.x();
        pixels(i, 1) = px.y();
    }
}

}  // namespace visa
