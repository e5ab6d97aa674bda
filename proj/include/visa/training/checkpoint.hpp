#pragma once

#include "visa/core/adam.hpp"
#include "visa/core/serialize.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace visa {

/// What a checkpoint covers: named parameter stores plus optimizer states.
/// The manifest enumerates arrays in this order, so save and load must be
/// given structurally identical specs.
template <typename S>
struct CheckpointSpec {
    struct StoreRef {
        std::string name;
        ParamStore<S>* store;
    };
    struct OptimRef {
        std::string name;
        Adam<S>* opt;
    };
    std::vector<StoreRef> stores;
    std::vector<OptimRef> optims;
};

struct CheckpointMeta {
    std::string stage;
    long step = 0;
    std::uint64_t seed = 0;
};

namespace detail {

template <typename S>
struct ArrayRef {
    std::string store, name;
    MatX<S>* mat;
};

/// Flattens a spec into the canonical array order: store parameters first,
/// then per-optimizer first and second moments.
template <typename S>
std::vector<ArrayRef<S>> enumerateArrays(const CheckpointSpec<S>& spec) {
    std::vector<ArrayRef<S>> out;
    for (const auto& sr : spec.stores)
        for (auto& p : sr.store->all()) out.push_back({sr.name, p.name, &p.value});
    for (const auto& oref : spec.optims) {
        const auto& ps = oref.opt->params();
        for (size_t i = 0; i < ps.size(); ++i) {
            out.push_back({oref.name, ps[i]->name + ".m1", &oref.opt->moment1()[i]});
            out.push_back({oref.name, ps[i]->name + ".m2", &oref.opt->moment2()[i]});
        }
    }
    return out;
}

}  // namespace detail

/// Writes manifest.json + arrays.bin into `dir`, staging in a sibling temp
/// directory and renaming at the end so a crash never leaves a torn
/// checkpoint at the target path.
template <typename S>
void saveCheckpoint(const CheckpointSpec<S>& spec, const CheckpointMeta& meta,
                    const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::path tmp = dir;
    tmp += ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    auto arrays = detail::enumerateArrays(spec);
    nlohmann::json marr = nlohmann::json::array();
    {
        std::ofstream bin(tmp / "arrays.bin", std::ios::binary | std::ios::trunc);
        check(bool(bin), "checkpoint: cannot write " + (tmp / "arrays.bin").string());
        for (const auto& a : arrays) {
            marr.push_back({{"store", a.store},
                            {"name", a.name},
                            {"rows", a.mat->rows()},
                            {"cols", a.mat->cols()},
                            {"checksum", checksum(*a.mat)}});
            writeBlob(bin, *a.mat);
        }
    }

    nlohmann::json mopt = nlohmann::json::array();
    for (const auto& o : spec.optims)
        mopt.push_back({{"name", o.name}, {"step_count", o.opt->stepCount()}});

    nlohmann::json manifest{{"format", 1},        {"dtype", "f32"},
                            {"stage", meta.stage}, {"step", meta.step},
                            {"seed", meta.seed},   {"arrays", marr},
                            {"optimizers", mopt}};
    {
        std::ofstream mf(tmp / "manifest.json", std::ios::trunc);
        check(bool(mf), "checkpoint: cannot write manifest");
        mf << manifest.dump(2) << "\n";
    }

    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

/// Reads only the manifest header; used to decide how to rebuild the spec
/// (which stage's optimizers exist) before loading arrays.
inline CheckpointMeta peekCheckpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    check(bool(mf), "checkpoint: missing manifest at " + dir.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const std::exception& e) {
        check(false, std::string("checkpoint: unreadable manifest: ") + e.what());
    }
    check(manifest.value("format", 0) == 1, "checkpoint: unsupported format");
    CheckpointMeta meta;
    meta.stage = manifest.value("stage", std::string());
    meta.step = manifest.value("step", 0L);
    meta.seed = manifest.value("seed", std::uint64_t(0));
    return meta;
}

/// Restores every array and optimizer moment. All data is read and verified
/// (names, shapes, checksums) before anything is applied, so a corrupted
/// checkpoint raises without mutating any parameter.
template <typename S>
CheckpointMeta loadCheckpoint(const CheckpointSpec<S>& spec, const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    check(bool(mf), "checkpoint: missing manifest at " + dir.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const std::exception& e) {
        check(false, std::string("checkpoint: unreadable manifest: ") + e.what());
    }
    check(manifest.value("format", 0) == 1, "checkpoint: unsupported format");
    check(manifest.value("dtype", std::string()) == "f32", "checkpoint: unsupported dtype");

    auto targets = detail::enumerateArrays(spec);
    const auto& marr = manifest.at("arrays");
    check(marr.size() == targets.size(), "checkpoint: array count mismatch");

    std::ifstream bin(dir / "arrays.bin", std::ios::binary);
    check(bool(bin), "checkpoint: missing arrays.bin");
    std::vector<MatX<S>> staged;
    staged.reserve(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) {
        const auto& a = marr.at(i);
        const auto& tg = targets[i];
        check(a.at("store").get<std::string>() == tg.store &&
                  a.at("name").get<std::string>() == tg.name,
              "checkpoint: unexpected array " + a.at("name").get<std::string>());
        Index rows = a.at("rows").get<Index>();
        Index cols = a.at("cols").get<Index>();
        check(rows == tg.mat->rows() && cols == tg.mat->cols(),
              "checkpoint: shape mismatch for " + tg.name);
        MatX<S> m = readBlob<S>(bin, rows, cols);
        check(checksum(m) == a.at("checksum").get<std::uint64_t>(),
              "checkpoint: checksum mismatch for " + tg.name);
        staged.push_back(std::move(m));
    }

    const auto& mopt = manifest.at("optimizers");
    check(mopt.size() == spec.optims.size(), "checkpoint: optimizer count mismatch");
    std::vector<long> stepCounts;
    for (size_t i = 0; i < spec.optims.size(); ++i) {
        check(mopt.at(i).at("name").get<std::string>() == spec.optims[i].name,
              "checkpoint: optimizer name mismatch");
        stepCounts.push_back(mopt.at(i).at("step_count").get<long>());
    }

    for (size_t i = 0; i < targets.size(); ++i) *targets[i].mat = std::move(staged[i]);
    for (size_t i = 0; i < spec.optims.size(); ++i)
        spec.optims[i].opt->setStepCount(stepCounts[i]);

    CheckpointMeta meta;
    meta.stage = manifest.value("stage", std::string());
    meta.step = manifest.value("step", 0L);
    meta.seed = manifest.value("seed", std::uint64_t(0));
    return meta;
}

/// Inference-side loader: restores the arrays of one named store and skips
/// everything else (other stores, optimizer moments). Every parameter of the
/// target store must be present with matching shape and checksum; as with the
/// full loader, nothing is applied until everything passed.
template <typename S>
CheckpointMeta loadStoreSubset(const std::filesystem::path& dir, const std::string& storeName,
                               ParamStore<S>& store) {
    std::ifstream mf(dir / "manifest.json");
    check(bool(mf), "checkpoint: missing manifest at " + dir.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const std::exception& e) {
        check(false, std::string("checkpoint: unreadable manifest: ") + e.what());
    }
    check(manifest.value("format", 0) == 1, "checkpoint: unsupported format");
    check(manifest.value("dtype", std::string()) == "f32", "checkpoint: unsupported dtype");

    std::ifstream bin(dir / "arrays.bin", std::ios::binary);
    check(bool(bin), "checkpoint: missing arrays.bin");

    std::map<std::string, MatX<S>> staged;
    for (const auto& a : manifest.at("arrays")) {
        Index rows = a.at("rows").get<Index>();
        Index cols = a.at("cols").get<Index>();
        if (a.at("store").get<std::string>() != storeName) {
            bin.seekg(std::streamoff(blobByteLength(rows, cols)), std::ios::cur);
            check(bool(bin), "checkpoint: truncated arrays.bin");
            continue;
        }
        std::string name = a.at("name").get<std::string>();
        Parameter<S>* p = store.find(name);
        check(p != nullptr, "checkpoint: store has no parameter " + name);
        check(rows == p->value.rows() && cols == p->value.cols(),
              "checkpoint: shape mismatch for " + name);
        MatX<S> m = readBlob<S>(bin, rows, cols);
        check(checksum(m) == a.at("checksum").get<std::uint64_t>(),
              "checkpoint: checksum mismatch for " + name);
        staged.emplace(std::move(name), std::move(m));
    }
    for (auto& p : store.all())
        check(staged.count(p.name) == 1, "checkpoint: missing parameter " + p.name);
    for (auto& p : store.all()) p.value = std::move(staged.at(p.name));

    CheckpointMeta meta;
    meta.stage = manifest.value("stage", std::string());
    meta.step = manifest.value("step", 0L);
    meta.seed = manifest.value("seed", std::uint64_t(0));
    return meta;
}

}  // namespace visa
