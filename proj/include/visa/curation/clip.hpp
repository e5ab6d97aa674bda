#pragma once

#include "visa/core/image.hpp"
#include "visa/geometry/camera.hpp"
#include "visa/geometry/lbs.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace visa {

/// One video clip with per-frame parameters and 2D keypoint tracks. Frames
/// live on disk (frames/%05d.png + masks/%05d.png); everything else is held
/// in memory and serialized to params.json / keypoints.json.
struct ClipRecord {
    std::string id;
    std::filesystem::path dir;
    int frameCount = 0;
    Camera<double> camera;
    std::vector<PoseShapeParams<double>> params;  // per frame
    std::vector<MatX<double>> keypoints;          // per frame, K x 2 pixels
    std::vector<VecX<double>> confidences;        // per frame, K in [0,1]
    std::string status = "pending";               // pending | kept | rejected
    std::string reason;                           // machine-readable, set iff rejected
    double initialError = 0.0;                    // RMS px before refinement
    double reprojError = 0.0;                     // RMS px after refinement

    void validate() const {
        check(frameCount >= 2, "clip " + id + ": needs at least two frames");
        check(int(keypoints.size()) == frameCount && int(confidences.size()) == frameCount,
              "clip " + id + ": keypoint track length mismatch");
        for (const auto& c : confidences)
            check(c.minCoeff() >= 0.0 && c.maxCoeff() <= 1.0,
                  "clip " + id + ": confidences must lie in [0,1]");
        for (const auto& k : keypoints)
            check(k.cols() == 2 && k.rows() == keypoints.front().rows(),
                  "clip " + id + ": keypoints must be Kx2 with constant K");
    }

    std::filesystem::path framePath(int f) const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%05d.png", f);
        return dir / "frames" / buf;
    }
    std::filesystem::path maskPath(int f) const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%05d.png", f);
        return dir / "masks" / buf;
    }
};

/// Coarse body region of a named joint, used by the confidence filter.
inline Part jointPart(const std::string& name) {
    auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
    if (has("hand") || has("finger") || has("wrist")) return Part::Hand;
    if (has("head") || has("jaw")) return Part::Face;
    if (has("neck")) return Part::Neck;
    return Part::Body;
}

namespace detail {

inline nlohmann::json matToJson(const MatX<double>& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline MatX<double> matFromJson(const nlohmann::json& j, Index cols = -1) {
    check(j.is_array() && !j.empty(), "clip json: expected a non-empty matrix");
    Index rows = Index(j.size());
    Index nc = Index(j.front().size());
    if (cols >= 0) check(nc == cols, "clip json: unexpected column count");
    MatX<double> m(rows, nc);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < nc; ++c) m(r, c) = j[size_t(r)][size_t(c)].get<double>();
    return m;
}

}  // namespace detail

inline void saveClipMeta(const ClipRecord& clip) {
    clip.validate();
    nlohmann::json pj;
    pj["camera"] = {{"fx", clip.camera.fx},
                    {"fy", clip.camera.fy},
                    {"cx", clip.camera.cx},
                    {"cy", clip.camera.cy},
                    {"rot", detail::matToJson(clip.camera.worldToCam.rot)},
                    {"trans", detail::matToJson(clip.camera.worldToCam.trans)}};
    pj["frames"] = nlohmann::json::array();
    for (const auto& p : clip.params) {
        nlohmann::json f;
        f["quats"] = detail::matToJson(p.quats);
        f["translation"] = detail::matToJson(p.translation);
        f["shape"] = detail::matToJson(p.shape);
        f["expr"] = detail::matToJson(p.expr);
        pj["frames"].push_back(std::move(f));
    }
    std::ofstream pf(clip.dir / "params.json", std::ios::trunc);
    check(bool(pf), "cannot write params.json for " + clip.id);
    pf << pj.dump(1) << "\n";

    nlohmann::json kj = nlohmann::json::array();
    for (int f = 0; f < clip.frameCount; ++f) {
        nlohmann::json e;
        e["points"] = detail::matToJson(clip.keypoints[size_t(f)]);
        e["confidence"] = detail::matToJson(clip.confidences[size_t(f)]);
        kj.push_back(std::move(e));
    }
    std::ofstream kf(clip.dir / "keypoints.json", std::ios::trunc);
    check(bool(kf), "cannot write keypoints.json for " + clip.id);
    kf << kj.dump(1) << "\n";
}

inline ClipRecord loadClipMeta(const std::filesystem::path& dir) {
    ClipRecord clip;
    clip.dir = dir;
    clip.id = dir.filename().string();

    std::ifstream pf(dir / "params.json");
    check(bool(pf), "missing params.json in " + dir.string());
    nlohmann::json pj = nlohmann::json::parse(pf);
    const auto& cj = pj.at("camera");
    clip.camera.fx = cj.at("fx").get<double>();
    clip.camera.fy = cj.at("fy").get<double>();
    clip.camera.cx = cj.at("cx").get<double>();
    clip.camera.cy = cj.at("cy").get<double>();
    clip.camera.worldToCam.rot = Mat3<double>(detail::matFromJson(cj.at("rot"), 3));
    clip.camera.worldToCam.trans = Vec3<double>(detail::matFromJson(cj.at("trans"), 1));
    for (const auto& f : pj.at("frames")) {
        PoseShapeParams<double> p;
        p.quats = detail::matFromJson(f.at("quats"), 4);
        p.translation = Vec3<double>(detail::matFromJson(f.at("translation"), 1));
        p.shape = VecX<double>(detail::matFromJson(f.at("shape"), 1));
        p.expr = VecX<double>(detail::matFromJson(f.at("expr"), 1));
        clip.params.push_back(std::move(p));
    }

    std::ifstream kf(dir / "keypoints.json");
    check(bool(kf), "missing keypoints.json in " + dir.string());
    nlohmann::json kj = nlohmann::json::parse(kf);
    for (const auto& e : kj) {
        clip.keypoints.push_back(detail::matFromJson(e.at("points"), 2));
        clip.confidences.push_back(VecX<double>(detail::matFromJson(e.at("confidence"), 1)));
    }
    clip.frameCount = int(clip.keypoints.size());
    clip.validate();
    return clip;
}

}  // namespace visa
