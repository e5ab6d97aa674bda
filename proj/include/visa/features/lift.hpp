#pragma once

#include "visa/core/ops.hpp"
#include "visa/geometry/camera.hpp"

namespace visa {

/// Samples a feature map at the projected location of each vertex.
///
/// The map grid is corner-aligned with the source image: map pixel (0,0)
/// coincides with source pixel (0,0) and map pixel (w-1,h-1) with source
/// pixel (srcW-1,srcH-1). In-frame vertices get the bilinear sample; points
/// behind the camera or outside the frame get the learned out-of-view row.
/// Differentiable w.r.t. the map, the vertices, and the out-of-view vector.
template <typename S>
Var<S> liftFeatures(Var<S> map, int mapH, int mapW, int srcH, int srcW, Var<S> verts,
                    const Camera<S>& cam, Var<S> oov, std::vector<char>* inViewOut = nullptr) {
    Tape<S>& t = *map.tape;
    check(verts.cols() == 3, "lift: vertices must be Nx3");
    check(map.rows() == Index(mapH) * mapW, "lift: map shape mismatch");
    check(oov.rows() == 1 && oov.cols() == map.cols(), "lift: out-of-view vector width mismatch");
    cam.validate();

    const Index n = verts.rows();
    const Index c = map.cols();
    const S su = srcW > 1 ? S(mapW - 1) / S(srcW - 1) : S(1);
    const S sv = srcH > 1 ? S(mapH - 1) / S(srcH - 1) : S(1);

    struct Sample {
        bool inView = false;
        Index corner[4] = {0, 0, 0, 0};
        S wgt[4] = {0, 0, 0, 0};
        S fu = 0, fv = 0;
        Eigen::Matrix<S, 1, 3> dudp, dvdp;  // map-pixel coords w.r.t. world position
    };
    auto samples = std::make_shared<std::vector<Sample>>(static_cast<size_t>(n));

    MatX<S> out(n, c);
    for (Index i = 0; i < n; ++i) {
        Sample& s = (*samples)[size_t(i)];
        Vec3<S> pw = verts.v().row(i).transpose();
        Vec3<S> pc = cam.toCam(pw);
        if (pc.z() > S(1e-6)) {
            Vec2<S> px = cam.pixelOf(pc);
            S u = px.x() * su, v = px.y() * sv;
            if (u >= S(0) && u <= S(mapW - 1) && v >= S(0) && v <= S(mapH - 1)) {
                s.inView = true;
                Index x0 = std::min<Index>(Index(std::floor(double(u))), std::max<Index>(mapW - 2, 0));
                Index y0 = std::min<Index>(Index(std::floor(double(v))), std::max<Index>(mapH - 2, 0));
                Index x1 = std::min<Index>(x0 + 1, mapW - 1);
                Index y1 = std::min<Index>(y0 + 1, mapH - 1);
                s.fu = u - S(x0);
                s.fv = v - S(y0);
                s.corner[0] = y0 * mapW + x0;
                s.corner[1] = y0 * mapW + x1;
                s.corner[2] = y1 * mapW + x0;
                s.corner[3] = y1 * mapW + x1;
                s.wgt[0] = (1 - s.fu) * (1 - s.fv);
                s.wgt[1] = s.fu * (1 - s.fv);
                s.wgt[2] = (1 - s.fu) * s.fv;
                s.wgt[3] = s.fu * s.fv;
                Eigen::Matrix<S, 2, 3> jpix = cam.pixelJacobian(pc) * cam.worldToCam.rot;
                s.dudp = su * jpix.row(0);
                s.dvdp = sv * jpix.row(1);
                out.row(i) = s.wgt[0] * map.v().row(s.corner[0]) +
                             s.wgt[1] * map.v().row(s.corner[1]) +
                             s.wgt[2] * map.v().row(s.corner[2]) +
                             s.wgt[3] * map.v().row(s.corner[3]);
            }
        }
        if (!s.inView) out.row(i) = oov.v().row(0);
    }
    if (inViewOut) {
        inViewOut->resize(size_t(n));
        for (Index i = 0; i < n; ++i) (*inViewOut)[size_t(i)] = (*samples)[size_t(i)].inView;
    }

    bool rg = map.rg() || verts.rg() || oov.rg();
    int mapId = map.id, vertsId = verts.id, oovId = oov.id;
    int id = t.emplace(std::move(out), rg, [samples, mapId, vertsId, oovId, n, c](Tape<S>& tt,
                                                                                 int self) {
        const MatX<S>& g = tt.grad(self);
        const MatX<S>& mapVal = tt.val(mapId);
        MatX<S> gMap = MatX<S>::Zero(mapVal.rows(), c);
        MatX<S> gVerts = MatX<S>::Zero(n, 3);
        RowX<S> gOov = RowX<S>::Zero(c);
        for (Index i = 0; i < n; ++i) {
            const auto& s = (*samples)[size_t(i)];
            if (!s.inView) {
                gOov += g.row(i);
                continue;
            }
            for (int k = 0; k < 4; ++k) gMap.row(s.corner[k]) += s.wgt[k] * g.row(i);
            // d weight / d(fu,fv) contracted with the sampled features.
            S d0 = g.row(i).dot(mapVal.row(s.corner[0]));
            S d1 = g.row(i).dot(mapVal.row(s.corner[1]));
            S d2 = g.row(i).dot(mapVal.row(s.corner[2]));
            S d3 = g.row(i).dot(mapVal.row(s.corner[3]));
            S gu = -(1 - s.fv) * d0 + (1 - s.fv) * d1 - s.fv * d2 + s.fv * d3;
            S gv = -(1 - s.fu) * d0 - s.fu * d1 + (1 - s.fu) * d2 + s.fu * d3;
            gVerts.row(i) = gu * s.dudp + gv * s.dvdp;
        }
        tt.accumulate(mapId, gMap);
        tt.accumulate(vertsId, gVerts);
        tt.accumulate(oovId, gOov);
    });
    return Var<S>(&t, id);
}

}  // namespace visa
