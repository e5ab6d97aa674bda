#pragma once

#include "visa/eval/metrics.hpp"
#include "visa/eval/spectrum.hpp"
#include "visa/training/pipeline.hpp"
#include "visa/training/data.hpp"

#include <string>
#include <vector>

namespace visa {

struct ReenactOptions {
    std::string mode = "self";  // "self": driving == reference identity, full metrics
                                // "cross": foreign driving poses, identity metric only
    std::uint64_t seed = 0;
    int maxFrames = 0;  // 0 = use every driving frame (rounded down to whole chunks)
};

template <typename S>
struct ReenactOutput {
    std::vector<Image<S>> frames;
    MetricRow metrics;
};

/// One-shot reenactment: lift the reference frame to an avatar, drive it with
/// the pose track, render per-frame feature conditions, and run the shader at
/// inference settings. Self mode scores the result against the driving clip's
/// own frames; cross mode only scores identity drift against the reference.
template <typename S>
ReenactOutput<S> reenact(const Pipeline<S>& pipe, const TrainClip<S>& refClip,
                         const TrainClip<S>& drivingClip, const ReenactOptions& opt,
                         const FaceEmbedder<S>& emb) {
    check(opt.mode == "self" || opt.mode == "cross", "reenact: mode must be self or cross");
    check(refClip.frameCount() >= 1, "reenact: reference clip is empty");
    const int chunk = pipe.cfg.shader.chunkFrames;
    int avail = drivingClip.frameCount();
    if (opt.maxFrames > 0) avail = std::min(avail, opt.maxFrames);
    const int nUse = (avail / chunk) * chunk;
    check(nUse >= chunk, "reenact: driving clip shorter than one chunk");

    Tape<S> t;
    const Image<S>& reference = refClip.frames.front();
    AvatarVars<S> avatar =
        pipe.reconstructAvatar(t, reference, refClip.params.front(), refClip.cam);

    Var<S> refLat = pipe.vae.encode(t, constant(t, reference.data));
    std::vector<Var<S>> cond;
    cond.reserve(size_t(nUse));
    for (int f = 0; f < nUse; ++f)
        cond.push_back(pipe.renderCond(t, avatar, drivingClip.params[size_t(f)], drivingClip.cam));

    RolloutOptions ro;
    ro.training = false;
    ro.seed = opt.seed;
    ro.clipId = 0;
    RolloutResult<S> roll = rollout(t, pipe.shader, pipe.vae, refLat, cond, ro);

    ReenactOutput<S> out;
    out.frames.reserve(size_t(nUse));
    for (int f = 0; f < nUse; ++f) {
        Image<S> img(pipe.cfg.imageSize, pipe.cfg.imageSize, 3);
        img.data = roll.frames[size_t(f)].v();
        out.frames.push_back(std::move(img));
    }

    std::vector<FaceCrop> crops;
    crops.reserve(size_t(nUse));
    for (int f = 0; f < nUse; ++f)
        crops.push_back(faceCropRegion(pipe.tpl, drivingClip.params[size_t(f)], drivingClip.cam,
                                       pipe.cfg.imageSize));

    out.metrics.id = drivingClip.id.empty() ? std::string("clip") : drivingClip.id;
    if (opt.mode == "self") {
        std::vector<Image<S>> gt(drivingClip.frames.begin(), drivingClip.frames.begin() + nUse);
        double p = 0, s = 0, l = 0;
        for (int f = 0; f < nUse; ++f) {
            p += psnr(out.frames[size_t(f)], gt[size_t(f)]);
            s += ssim(out.frames[size_t(f)], gt[size_t(f)]);
            l += lpipsProxyMetric(pipe.perceptual, out.frames[size_t(f)], gt[size_t(f)]);
        }
        out.metrics.set("psnr", p / nUse);
        out.metrics.set("ssim", s / nUse);
        out.metrics.set("lpips_proxy", l / nUse);
        out.metrics.set("ips_self", ipsSelf(emb, out.frames, gt, crops));
        out.metrics.set("hf_ratio", hfEnergyRatio(out.frames));
        out.metrics.set("hf_ratio_gt", hfEnergyRatio(gt));
    } else {
        FaceCrop refCrop =
            faceCropRegion(pipe.tpl, refClip.params.front(), refClip.cam, pipe.cfg.imageSize);
        out.metrics.set("ips_cross", ipsCross(emb, out.frames, reference, refCrop, crops));
    }
    return out;
}

}  // namespace visa
