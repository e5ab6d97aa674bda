#pragma once

#include "visa/curation/filters.hpp"
#include "visa/curation/refine.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

namespace visa {

struct CurationConfig {
    double varThreshold = 0.5;    // px^2
    double confThreshold = 0.5;
    double reprojThreshold = 5.0; // RMS px
    RefineOptions refine;
};

struct ManifestEntry {
    std::string id;
    std::string status;  // kept | rejected
    std::string reason;  // empty iff kept
    double initialError = 0.0;
    double finalError = 0.0;
};

struct CurationManifest {
    CurationConfig config;
    std::vector<ManifestEntry> entries;

    long keptCount() const {
        long n = 0;
        for (const auto& e : entries) n += e.status == "kept";
        return n;
    }
};

/// Runs the four curation stages in order (static filter, confidence filter,
/// refinement, reprojection filter) over independent clips. Updates each
/// clip's status in place; rejected clips carry exactly one reason.
inline CurationManifest runCurationPipeline(std::vector<ClipRecord>& clips,
                                            const BodyTemplate<double>& tpl,
                                            const CurationConfig& cfg) {
    CurationManifest manifest;
    manifest.config = cfg;
    for (ClipRecord& clip : clips) {
        ManifestEntry e;
        e.id = clip.id;
        clip.reason.clear();

        if (!passesStaticFilter(clip, cfg.varThreshold)) {
            clip.reason = "static";
        } else {
            std::string part;
            if (!passesConfidenceFilter(clip, tpl.jointNames, cfg.confThreshold,
                                        {Part::Face, Part::Hand}, &part)) {
                clip.reason = "low_confidence:" + part;
            } else {
                RefineResult r = refineParams(tpl, clip, clip.params, cfg.refine);
                clip.params = r.params;
                clip.initialError = r.initialError;
                clip.reprojError = r.finalError;
                e.initialError = r.initialError;
                e.finalError = r.finalError;
                if (r.diverged) {
                    clip.reason = "diverged";
                } else if (!passesReprojectionFilter(clip, cfg.reprojThreshold)) {
                    clip.reason = "reprojection";
                }
            }
        }
        clip.status = clip.reason.empty() ? "kept" : "rejected";
        e.status = clip.status;
        e.reason = clip.reason;
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

inline void saveManifest(const CurationManifest& m, const std::filesystem::path& path) {
    nlohmann::json j;
    j["thresholds"] = {{"variance", m.config.varThreshold},
                       {"confidence", m.config.confThreshold},
                       {"reprojection", m.config.reprojThreshold}};
    j["clips"] = nlohmann::json::array();
    for (const auto& e : m.entries) {
        j["clips"].push_back({{"id", e.id},
                              {"status", e.status},
                              {"reason", e.reason},
                              {"initial_error", e.initialError},
                              {"final_error", e.finalError}});
    }
    std::ofstream f(path, std::ios::trunc);
    check(bool(f), "cannot write manifest " + path.string());
    f << j.dump(1) << "\n";
}

inline CurationManifest loadManifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    check(bool(f), "cannot read manifest " + path.string());
    nlohmann::json j = nlohmann::json::parse(f);
    CurationManifest m;
    m.config.varThreshold = j.at("thresholds").at("variance").get<double>();
    m.config.confThreshold = j.at("thresholds").at("confidence").get<double>();
    m.config.reprojThreshold = j.at("thresholds").at("reprojection").get<double>();
    for (const auto& e : j.at("clips")) {
        ManifestEntry me;
        me.id = e.at("id").get<std::string>();
        me.status = e.at("status").get<std::string>();
        me.reason = e.at("reason").get<std::string>();
        me.initialError = e.at("initial_error").get<double>();
        me.finalError = e.at("final_error").get<double>();
        m.entries.push_back(std::move(me));
    }
    return m;
}

}  // namespace visa
