#pragma once

#include "visa/curation/clip.hpp"
#include "visa/recon/animate.hpp"
#include "visa/recon/rasterize.hpp"

#include <cmath>
#include <filesystem>

namespace visa {

/// Deterministic "true" splat avatar used to render synthetic footage: one
/// opaque Gaussian per template vertex with a smooth procedural color field.
template <typename S>
struct GroundTruthAvatar {
    MatX<S> positions, rotations, logScales, opacities, colors, features;

    static GroundTruthAvatar make(const BodyTemplate<S>& tpl, Index cf = 8) {
        Index n = tpl.numVertices();
        GroundTruthAvatar a;
        a.positions = tpl.vertices;
        a.rotations = MatX<S>::Zero(n, 4);
        a.rotations.col(0).setOnes();
        a.logScales = MatX<S>::Constant(n, 3, S(std::log(0.012)));
        a.opacities = MatX<S>::Constant(n, 1, S(0.95));
        a.colors.resize(n, 3);
        for (Index i = 0; i < n; ++i) {
            Vec3<S> p = tpl.vertices.row(i).transpose();
            a.colors(i, 0) = S(0.5 + 0.45 * std::sin(9.0 * p.x() + 1.0));
            a.colors(i, 1) = S(0.5 + 0.45 * std::sin(7.0 * p.y() + 2.0));
            a.colors(i, 2) = S(0.5 + 0.45 * std::sin(8.0 * p.z() + 4.0));
        }
        a.features = MatX<S>::Zero(n, cf);
        return a;
    }

    AvatarVars<S> onTape(Tape<S>& t) const {
        AvatarVars<S> v;
        v.positions = constant(t, positions);
        v.rotations = constant(t, rotations);
        v.logScales = constant(t, logScales);
        v.opacities = constant(t, opacities);
        v.colors = constant(t, colors);
        v.features = constant(t, features);
        return v;
    }
};

/// Smooth sinusoidal pose trajectory: each joint oscillates about a random
/// axis with per-clip amplitude and phase, the root translation wobbles
/// slightly. Frame 0 of every clip is close to rest.
template <typename S>
PoseShapeParams<S> trajectoryPose(const BodyTemplate<S>& tpl, double phase01,
                                  const MatX<S>& axis, const VecX<S>& amp, const VecX<S>& phi,
                                  const Vec3<S>& wobble) {
    PoseShapeParams<S> p = PoseShapeParams<S>::rest(tpl);
    for (Index j = 0; j < tpl.numJoints(); ++j) {
        double angle = double(amp(j)) * std::sin(2.0 * M_PI * phase01 + double(phi(j)));
        Vec3<S> ax = axis.row(j).transpose();
        double half = 0.5 * angle;
        p.quats(j, 0) = S(std::cos(half));
        p.quats.template block<1, 3>(j, 1) = (ax * S(std::sin(half))).transpose();
    }
    p.translation = wobble * S(std::sin(2.0 * M_PI * phase01));
    return p;
}

struct SynthOptions {
    int nClips = 4;
    int framesPerClip = 21;
    int imageSize = 64;
    std::uint64_t seed = 0;
    Index cf = 8;
};

/// Renders a synthetic dataset with exact ground truth: smooth trajectories
/// posed through LBS, rasterized frames and masks on disk, projected joint
/// keypoints with confidence 1 in the clip metadata.
template <typename S>
std::vector<ClipRecord> synthGenerate(const BodyTemplate<S>& tpl, const Camera<S>& cam,
                                      const std::filesystem::path& outDir,
                                      const SynthOptions& opt) {
    check(opt.nClips > 0 && opt.framesPerClip >= 2, "synth: need clips with >= 2 frames");
    std::filesystem::create_directories(outDir);
    GroundTruthAvatar<S> gt = GroundTruthAvatar<S>::make(tpl, opt.cf);

    std::vector<ClipRecord> clips;
    for (int c = 0; c < opt.nClips; ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "clip_%03d", c);
        ClipRecord clip;
        clip.id = name;
        clip.dir = outDir / name;
        clip.frameCount = opt.framesPerClip;
        clip.camera = cam.template cast<double>();
        std::filesystem::create_directories(clip.dir / "frames");
        std::filesystem::create_directories(clip.dir / "masks");

        Rng rng = Rng::keyed(opt.seed, std::uint64_t(c), 0x5117u);
        MatX<S> axis(tpl.numJoints(), 3);
        VecX<S> amp(tpl.numJoints()), phi(tpl.numJoints());
        for (Index j = 0; j < tpl.numJoints(); ++j) {
            Vec3<S> ax(S(rng.normal()), S(rng.normal()), S(rng.normal()));
            S n = std::max(ax.norm(), S(1e-9));
            axis.row(j) = (ax / n).transpose();
            amp(j) = S(rng.uniform(0.06, 0.22));
            phi(j) = S(rng.uniform(0.0, 2.0 * M_PI));
        }
        amp(0) = S(rng.uniform(0.02, 0.06));  // keep the root nearly level
        Vec3<S> wobble(S(rng.uniform(-0.03, 0.03)), S(rng.uniform(-0.03, 0.03)),
                       S(rng.uniform(-0.01, 0.01)));

        for (int f = 0; f < opt.framesPerClip; ++f) {
            double phase01 = double(f) / double(opt.framesPerClip);
            PoseShapeParams<S> pose = trajectoryPose(tpl, phase01, axis, amp, phi, wobble);

            Tape<S> t;
            AvatarVars<S> avatar = gt.onTape(t);
            PosedGaussians<S> pg = animate(t, avatar, tpl, pose);
            RasterOptions ro;
            ro.h = ro.w = opt.imageSize;
            ro.wantFeat = false;
            RenderVars<S> rv = rasterize(t, pg, cam, ro);

            Image<float> frame(opt.imageSize, opt.imageSize, 3);
            Image<float> mask(opt.imageSize, opt.imageSize, 1);
            for (int y = 0; y < opt.imageSize; ++y) {
                for (int x = 0; x < opt.imageSize; ++x) {
                    Index row = Index(y) * opt.imageSize + x;
                    for (int ch = 0; ch < 3; ++ch)
                        frame.at(y, x, ch) = float(rv.rgb.v()(row, ch));
                    mask.at(y, x, 0) = float(rv.mask.v()(row, 0));
                }
            }
            writePng(clip.framePath(f).string(), frame);
            writePng(clip.maskPath(f).string(), mask);

            // exact ground-truth keypoints: projected posed joints
            LbsForward<S> lbs = lbsPose(tpl, pose);
            MatX<S> px;
            VecX<S> depth;
            project(lbs.fk.posedJoints, cam, px, depth);

            PoseShapeParams<double> poseD;
            poseD.quats = pose.quats.template cast<double>();
            poseD.translation = pose.translation.template cast<double>();
            poseD.shape = pose.shape.template cast<double>();
            poseD.expr = pose.expr.template cast<double>();
            clip.params.push_back(std::move(poseD));
            clip.keypoints.push_back(px.template cast<double>());
            clip.confidences.push_back(VecX<double>::Ones(tpl.numJoints()));
        }
        clip.status = "pending";
        saveClipMeta(clip);
        clips.push_back(std::move(clip));
    }
    return clips;
}

}  // namespace visa
