#pragma once

#include "visa/core/image.hpp"
#include "visa/geometry/lbs.hpp"
#include "visa/losses/perceptual.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace visa {

/// Peak signal-to-noise ratio in dB over all channels; images in [0,1].
/// Identical inputs report the serializable cap of 99 dB instead of infinity.
template <typename S>
double psnr(const Image<S>& a, const Image<S>& b) {
    check(a.h == b.h && a.w == b.w && a.c == b.c, "psnr: shape mismatch");
    double mse = double((a.data - b.data).template cast<double>().squaredNorm()) /
                 double(a.data.size());
    if (mse <= 1e-10) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussianWindow(int n, double sigma) {
    std::vector<double> w(size_t(n), 0.0);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        double d = i - (n - 1) / 2.0;
        w[size_t(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += w[size_t(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace detail

/// Structural similarity with the standard 11x11 Gaussian window (sigma 1.5)
/// and stabilizers C1=0.01^2, C2=0.03^2; channel SSIM maps are averaged over
/// fully interior windows, then over channels.
template <typename S>
double ssim(const Image<S>& a, const Image<S>& b) {
    check(a.h == b.h && a.w == b.w && a.c == b.c, "ssim: shape mismatch");
    const int win = 11;
    const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    check(a.h >= win && a.w >= win, "ssim: image smaller than the 11x11 window");
    std::vector<double> g = detail::gaussianWindow(win, sigma);

    double total = 0;
    for (int ch = 0; ch < a.c; ++ch) {
        double acc = 0;
        long count = 0;
        for (int y = 0; y + win <= a.h; ++y) {
            for (int x = 0; x + win <= a.w; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int j = 0; j < win; ++j)
                    for (int i = 0; i < win; ++i) {
                        double wgt = g[size_t(j)] * g[size_t(i)];
                        double va = double(a.at(y + j, x + i, ch));
                        double vb = double(b.at(y + j, x + i, ch));
                        mx += wgt * va;
                        my += wgt * vb;
                        sxx += wgt * va * va;
                        syy += wgt * vb * vb;
                        sxy += wgt * va * vb;
                    }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                acc += ((2 * mx * my + c1) * (2 * sxy + c2)) /
                       ((mx * mx + my * my + c1) * (sxx + syy + c2));
                ++count;
            }
        }
        total += acc / double(count);
    }
    return total / a.c;
}

/// Perceptual distance of the seed-pinned random-feature stack, evaluated on
/// plain values via a scratch tape.
template <typename S>
double lpipsProxyMetric(const PerceptualFeatures<S>& net, const Image<S>& a, const Image<S>& b) {
    Tape<S> t;
    Var<S> d = lpipsProxy(t, net, constant(t, a.data), constant(t, b.data), a.h, a.w);
    return double(d.v()(0, 0));
}

// ---------------------------------------------------------------------------
// Identity preservation
// ---------------------------------------------------------------------------

/// Square crop window in pixel coordinates.
struct FaceCrop {
    int x0 = 0, y0 = 0, size = 0;
};

/// Face region from the template itself: the bounding square of the projected
/// face-labelled vertices under the given pose, padded and clamped. No
/// detector involved, so the crop is a pure function of (template, pose, cam).
template <typename S>
FaceCrop faceCropRegion(const BodyTemplate<S>& tpl, const PoseShapeParams<S>& pose,
                        const Camera<S>& cam, int imageSize, double pad = 0.3) {
    LbsForward<S> lbs = lbsPose(tpl, pose);
    double lo_x = 1e30, hi_x = -1e30, lo_y = 1e30, hi_y = -1e30;
    bool any = false;
    for (Index i = 0; i < lbs.posed.rows(); ++i) {
        if (tpl.partLabels[size_t(i)] != Part::Face) continue;
        Vec3<S> pc = cam.toCam(Vec3<S>(lbs.posed.row(i).transpose()));
        if (pc.z() <= S(1e-6)) continue;
        Vec2<S> px = cam.pixelOf(pc);
        lo_x = std::min(lo_x, double(px.x()));
        hi_x = std::max(hi_x, double(px.x()));
        lo_y = std::min(lo_y, double(px.y()));
        hi_y = std::max(hi_y, double(px.y()));
        any = true;
    }
    check(any, "face_crop: no face vertex projects in front of the camera");
    double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);
    double side = std::max(hi_x - lo_x, hi_y - lo_y) * (1.0 + pad);
    int size = std::max(4, int(std::ceil(side)));
    size = std::min(size, imageSize);
    FaceCrop fc;
    fc.size = size;
    fc.x0 = std::min(std::max(0, int(std::lround(cx - size / 2.0))), imageSize - size);
    fc.y0 = std::min(std::max(0, int(std::lround(cy - size / 2.0))), imageSize - size);
    return fc;
}

template <typename S>
Image<S> cropResize(const Image<S>& img, const FaceCrop& fc, int out) {
    Image<S> patch(fc.size, fc.size, img.c);
    for (int y = 0; y < fc.size; ++y)
        for (int x = 0; x < fc.size; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                int sy = std::min(std::max(0, fc.y0 + y), img.h - 1);
                int sx = std::min(std::max(0, fc.x0 + x), img.w - 1);
                patch.at(y, x, ch) = img.at(sy, sx, ch);
            }
    return resizeBilinear(patch, out, out);
}

/// Toy face embedder standing in for a pretrained identity network: two
/// seed-pinned strided conv stages on a 16x16 crop, flattened into a unit
/// 32-vector. Never trained.
template <typename S>
struct FaceEmbedder {
    int cropSize = 16, dim = 32;
    MatX<S> w1, w2, proj;

    explicit FaceEmbedder(std::uint64_t seed = 0xFACEDull) {
        Rng r1 = Rng::keyed(seed, 1), r2 = Rng::keyed(seed, 2), r3 = Rng::keyed(seed, 3);
        w1 = heInit<S>(27, 8, 27, r1);     // 3x3x3 -> 8
        w2 = heInit<S>(72, 16, 72, r2);    // 3x3x8 -> 16
        proj = heInit<S>(256, dim, 256, r3);
    }

    VecX<S> operator()(const Image<S>& face) const {
        check(face.h == cropSize && face.w == cropSize && face.c == 3,
              "face_embed: expected a 16x16 rgb crop");
        Tape<S> t;
        Var<S> x = constant(t, face.data);
        x = silu(matmul(im2col(x, 16, 16, 3, 2, 1), constant(t, w1)));  // 8x8 x 8
        x = silu(matmul(im2col(x, 8, 8, 3, 2, 1), constant(t, w2)));    // 4x4 x 16
        x = matmul(reshapeRowMajor(x, 1, 256), constant(t, proj));
        VecX<S> v = x.v().row(0).transpose();
        S n = v.norm();
        return v / std::max(n, S(1e-12));
    }
};

template <typename S>
double cosineDistance(const VecX<S>& a, const VecX<S>& b) {
    double na = double(a.norm()), nb = double(b.norm());
    double denom = std::max(na * nb, 1e-12);
    return 1.0 - double(a.dot(b)) / denom;
}

/// Mean frame-to-frame identity distance against the paired ground truth.
template <typename S>
double ipsSelf(const FaceEmbedder<S>& emb, const std::vector<Image<S>>& gen,
               const std::vector<Image<S>>& gt, const std::vector<FaceCrop>& crops) {
    check(!gen.empty() && gen.size() == gt.size() && gen.size() == crops.size(),
          "ips_self: sequence length mismatch");
    double acc = 0;
    for (size_t f = 0; f < gen.size(); ++f)
        acc += cosineDistance(emb(cropResize(gen[f], crops[f], emb.cropSize)),
                              emb(cropResize(gt[f], crops[f], emb.cropSize)));
    return acc / double(gen.size());
}

/// Mean identity distance of every generated frame to the single reference.
template <typename S>
double ipsCross(const FaceEmbedder<S>& emb, const std::vector<Image<S>>& gen,
                const Image<S>& reference, const FaceCrop& refCrop,
                const std::vector<FaceCrop>& crops) {
    check(!gen.empty() && gen.size() == crops.size(), "ips_cross: sequence length mismatch");
    VecX<S> e0 = emb(cropResize(reference, refCrop, emb.cropSize));
    double acc = 0;
    for (size_t f = 0; f < gen.size(); ++f)
        acc += cosineDistance(emb(cropResize(gen[f], crops[f], emb.cropSize)), e0);
    return acc / double(gen.size());
}

// ---------------------------------------------------------------------------
// Report plumbing
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string id;
    std::vector<std::pair<std::string, double>> values;

    void set(const std::string& key, double v) { values.emplace_back(key, v); }
    bool has(const std::string& key) const {
        for (const auto& [k, v] : values)
            if (k == key) return true;
        return false;
    }
    double at(const std::string& key) const {
        for (const auto& [k, v] : values)
            if (k == key) return v;
        throw InvalidInput("metric row: missing key " + key);
    }
};

struct EvalReport {
    std::vector<MetricRow> rows;

    /// Mean of every key present in all rows.
    MetricRow aggregate() const {
        MetricRow agg;
        agg.id = "aggregate";
        if (rows.empty()) return agg;
        for (const auto& [key, v0] : rows.front().values) {
            bool everywhere = true;
            double sum = 0;
            for (const auto& r : rows) {
                if (!r.has(key)) {
                    everywhere = false;
                    break;
                }
                sum += r.at(key);
            }
            if (everywhere) agg.set(key, sum / double(rows.size()));
        }
        return agg;
    }

    nlohmann::json toJson() const {
        nlohmann::json jrows = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json jr{{"id", r.id}};
            for (const auto& [k, v] : r.values) jr[k] = v;
            jrows.push_back(jr);
        }
        nlohmann::json jagg;
        MetricRow agg = aggregate();
        for (const auto& [k, v] : agg.values) jagg[k] = v;
        return nlohmann::json{{"clips", jrows}, {"aggregate", jagg}};
    }
};

}  // namespace visa
