#pragma once

#include "visa/features/features.hpp"
#include "visa/losses/perceptual.hpp"
#include "visa/recon/gaussians.hpp"
#include "visa/recon/rasterize.hpp"
#include "visa/shader/shader.hpp"
#include "visa/shader/vae.hpp"

namespace visa {

/// End-to-end generator configuration. The reconstructor's rendering-feature
/// width is tied to the shader's condition width so rasterized feature maps
/// plug straight into the denoiser.
struct PipelineConfig {
    FeatureConfig feat;
    ReconConfig recon;
    ShaderConfig shader;
    int imageSize = 64;

    PipelineConfig() { recon.cf = shader.cf; }

    void validate() const {
        shader.validate();
        check(recon.cf == shader.cf,
              "pipeline: rendered feature width must match the shader condition width");
        check(feat.tokenWidth() == recon.tokenWidth,
              "pipeline: feature token width must match the reconstructor input");
        check(imageSize == 8 * shader.latentH && imageSize == 8 * shader.latentW,
              "pipeline: image size must be 8x the latent grid");
    }
};

/// Rescales intrinsics for rendering at a different resolution; pixel-center
/// aligned, so factor 1/8 maps a 64-grid camera onto the 8-grid latent plane.
template <typename S>
Camera<S> scaledCamera(const Camera<S>& cam, double factor) {
    Camera<S> out = cam;
    out.fx = S(double(cam.fx) * factor);
    out.fy = S(double(cam.fy) * factor);
    out.cx = S((double(cam.cx) + 0.5) * factor - 0.5);
    out.cy = S((double(cam.cy) + 0.5) * factor - 0.5);
    return out;
}

/// The one-shot avatar reconstructor plus the causal shader, sharing one
/// parameter store. The perceptual net is seed-pinned and never trained.
template <typename S>
struct Pipeline {
    PipelineConfig cfg;
    BodyTemplate<S> tpl;
    ParamStore<S> store;
    FeatureExtractor<S> feat;
    ReconNet<S> recon;
    ShaderNet<S> shader;
    PixelVae<S> vae;
    PerceptualFeatures<S> perceptual;

    Pipeline(BodyTemplate<S> tpl_, const PipelineConfig& cfg_, std::uint64_t seed)
        : cfg(cfg_), tpl(std::move(tpl_)) {
        cfg.validate();
        Rng rng = Rng::keyed(seed, 0x91BEull);
        feat = FeatureExtractor<S>(store, cfg.feat, tpl.vertices.rows(), rng);
        recon = ReconNet<S>(store, cfg.recon, rng);
        shader = ShaderNet<S>(store, cfg.shader, rng);
        vae = PixelVae<S>(store, cfg.shader.cz, cfg.imageSize, rng);
    }

    /// Reference image + reference pose -> canonical Gaussian avatar.
    /// Feature lifting uses the posed template as sample sites.
    AvatarVars<S> reconstructAvatar(Tape<S>& t, const Image<S>& reference,
                                    const PoseShapeParams<S>& refPose,
                                    const Camera<S>& cam) const {
        LbsForward<S> lbs = lbsPose(tpl, refPose);
        Var<S> posed = constant(t, lbs.posed);
        auto out = feat.run(t, reference, posed, cam);
        return recon(t, out.tokens, tpl.vertices);
    }

    /// Latent-resolution feature render of the animated avatar: the per-frame
    /// condition plane of the shader, (latentH*latentW) x C_f.
    Var<S> renderCond(Tape<S>& t, const AvatarVars<S>& avatar, const PoseShapeParams<S>& pose,
                      const Camera<S>& cam) const {
        PosedGaussians<S> pg = animate(t, avatar, tpl, pose);
        RasterOptions ro;
        ro.h = int(cfg.shader.latentH);
        ro.w = int(cfg.shader.latentW);
        ro.wantRgb = false;
        ro.wantMask = false;
        ro.wantFeat = true;
        Camera<S> latCam = scaledCamera(cam, double(ro.h) / cfg.imageSize);
        return rasterize(t, pg, latCam, ro).feat;
    }

    /// Full-resolution RGB + alpha render of the animated avatar.
    RenderVars<S> renderFrame(Tape<S>& t, const AvatarVars<S>& avatar,
                              const PoseShapeParams<S>& pose, const Camera<S>& cam) const {
        PosedGaussians<S> pg = animate(t, avatar, tpl, pose);
        RasterOptions ro;
        ro.h = ro.w = cfg.imageSize;
        ro.wantFeat = false;
        return rasterize(t, pg, cam, ro);
    }
};

}  // namespace visa
