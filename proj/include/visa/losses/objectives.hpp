#pragma once

#include "visa/losses/perceptual.hpp"

#include <nlohmann/json.hpp>

#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace visa {

/// Weighting coefficients for the composite objectives. Defaults are tuned so
/// no single term dominates at initialization.
struct LossWeights {
    double l1 = 1.0;        // image L1 (reconstruction)
    double perceptual = 1.0;
    double mask = 0.5;
    double latent = 1.0;    // paired latent term
    double l2 = 1.0;        // paired pixel term
    double pairedPerceptual = 1.0;
    double style = 0.01;
    double adv = 0.05;      // generator-side adversarial weight
    double reg = 1.0;       // discriminator logit-variance regulariser
    double sigmaReg = 0.01; // noise scale of the approximate R1/R2 probe

    void validate() const {
        for (double v : {l1, perceptual, mask, latent, l2, pairedPerceptual, style, adv, reg,
                         sigmaReg})
            check(v >= 0.0, "loss weights must be non-negative");
    }
};

/// A scalar objective plus its named components for logging.
template <typename S>
struct LossBreakdown {
    Var<S> total;
    std::vector<std::pair<std::string, double>> parts;

    double part(const std::string& name) const {
        for (auto& [k, v] : parts)
            if (k == name) return v;
        throw InvalidInput("unknown loss component: " + name);
    }
};

/// Writes one JSON line per component: {"step":n,"component":...,"value":...}.
template <typename S>
void logComponents(std::ostream& os, long step, const LossBreakdown<S>& b) {
    for (auto& [name, value] : b.parts) {
        nlohmann::json j{{"step", step}, {"component", name}, {"value", value}};
        os << j.dump() << "\n";
    }
}

/// Composite reconstruction objective over one rendered frame:
/// l1 * |I_ren - I_gt|_1 + perceptual * proxy + mask * ||M_ren - M_gt||^2.
/// Image terms are means so the weights are resolution-independent.
template <typename S>
LossBreakdown<S> reconLoss(Tape<S>& t, const PerceptualFeatures<S>& net, Var<S> imgRen,
                           Var<S> maskRen, Var<S> imgGt, Var<S> maskGt, int h, int w,
                           const LossWeights& wts) {
    wts.validate();
    check(imgRen.rows() == imgGt.rows() && imgRen.cols() == 3, "recon_loss: image shape mismatch");
    check(maskRen.rows() == maskGt.rows() && maskRen.cols() == 1, "recon_loss: mask shape mismatch");
    Var<S> l1 = meanAbs(sub(imgRen, imgGt));
    Var<S> lp = lpipsProxy(t, net, imgRen, imgGt, h, w);
    Var<S> lm = meanSq(sub(maskRen, maskGt));
    Var<S> total = add(add(scale(l1, S(wts.l1)), scale(lp, S(wts.perceptual))),
                       scale(lm, S(wts.mask)));
    LossBreakdown<S> out;
    out.total = total;
    out.parts = {{"l1", double(l1.v()(0, 0))},
                 {"perceptual", double(lp.v()(0, 0))},
                 {"mask", double(lm.v()(0, 0))},
                 {"total", double(total.v()(0, 0))}};
    return out;
}

/// Paired video objective: latent * ||Z_hat - Z_gt||^2 + l2 * ||V_hat - V_gt||^2
/// + pairedPerceptual * proxy + style * gram distance, averaged over frames.
template <typename S>
LossBreakdown<S> pairedLoss(Tape<S>& t, const PerceptualFeatures<S>& net,
                            const std::vector<Var<S>>& framesHat,
                            const std::vector<Var<S>>& latentsHat,
                            const std::vector<Var<S>>& framesGt,
                            const std::vector<Var<S>>& latentsGt, int h, int w,
                            const LossWeights& wts) {
    wts.validate();
    check(!framesHat.empty() && framesHat.size() == framesGt.size(), "paired_loss: frame counts");
    check(latentsHat.size() == latentsGt.size() && latentsHat.size() == framesHat.size(),
          "paired_loss: latent counts");
    auto averaged = [&](auto term) {
        Var<S> acc = term(0);
        for (size_t f = 1; f < framesHat.size(); ++f) acc = add(acc, term(f));
        return scale(acc, S(1) / S(framesHat.size()));
    };
    Var<S> lz = averaged([&](size_t f) { return meanSq(sub(latentsHat[f], latentsGt[f])); });
    Var<S> l2 = averaged([&](size_t f) { return meanSq(sub(framesHat[f], framesGt[f])); });
    Var<S> lp = averaged([&](size_t f) { return lpipsProxy(t, net, framesHat[f], framesGt[f], h, w); });
    Var<S> ls = averaged([&](size_t f) { return styleLoss(t, net, framesHat[f], framesGt[f], h, w); });
    Var<S> total = add(add(scale(lz, S(wts.latent)), scale(l2, S(wts.l2))),
                       add(scale(lp, S(wts.pairedPerceptual)), scale(ls, S(wts.style))));
    LossBreakdown<S> out;
    out.total = total;
    out.parts = {{"latent", double(lz.v()(0, 0))},
                 {"l2", double(l2.v()(0, 0))},
                 {"perceptual", double(lp.v()(0, 0))},
                 {"style", double(ls.v()(0, 0))},
                 {"total", double(total.v()(0, 0))}};
    return out;
}

}  // namespace visa
