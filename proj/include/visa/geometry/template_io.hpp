#pragma once

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "visa/core/serialize.hpp"
#include "visa/geometry/body_template.hpp"

namespace visa {

/// Writes `template.json` plus float32 blobs (vertices/joints/weights/bases)
/// into `dir`. The manifest records counts, topology, labels, and the blob
/// filenames with their byte lengths.
template <typename S>
void saveTemplate(const BodyTemplate<S>& tpl, const std::filesystem::path& dir) {
    tpl.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json m;
    m["n_vertices"] = tpl.numVertices();
    m["n_joints"] = tpl.numJoints();
    m["n_shape"] = tpl.numShape();
    m["n_expr"] = tpl.numExpr();
    m["parents"] = tpl.parents;
    m["joint_names"] = tpl.jointNames;
    std::vector<std::string> labels;
    for (Part p : tpl.partLabels) labels.push_back(partName(p));
    m["part_labels"] = labels;
    m["faces"] = tpl.faces;

    auto blob = [&](const std::string& name, const MatX<S>& mat) {
        writeBlob(dir / (name + ".f32"), mat);
        m["blobs"][name] = {{"file", name + ".f32"},
                            {"bytes", blobByteLength(mat.rows(), mat.cols())}};
    };
    blob("vertices", tpl.vertices);
    blob("joints", tpl.joints);
    blob("weights", tpl.weights);
    for (Index s = 0; s < tpl.numShape(); ++s)
        blob("shape_" + std::to_string(s), tpl.shapeBasis[size_t(s)]);
    for (Index e = 0; e < tpl.numExpr(); ++e)
        blob("expr_" + std::to_string(e), tpl.exprBasis[size_t(e)]);

    std::ofstream f(dir / "template.json");
    check(f.good(), "saveTemplate: cannot open manifest for writing");
    f << m.dump(2) << "\n";
}

template <typename S = double>
BodyTemplate<S> loadTemplate(const std::filesystem::path& dir) {
    std::ifstream f(dir / "template.json");
    check(f.good(), "loadTemplate: missing template.json in " + dir.string());
    nlohmann::json m = nlohmann::json::parse(f);

    BodyTemplate<S> tpl;
    Index n = m.at("n_vertices").get<Index>();
    Index j = m.at("n_joints").get<Index>();
    tpl.parents = m.at("parents").get<std::vector<int>>();
    tpl.jointNames = m.at("joint_names").get<std::vector<std::string>>();
    for (const auto& s : m.at("part_labels").get<std::vector<std::string>>())
        tpl.partLabels.push_back(partFromName(s));
    for (const auto& f3 : m.at("faces")) {
        check(f3.size() == 3, "loadTemplate: malformed face entry");
        tpl.faces.push_back({f3[0].get<int>(), f3[1].get<int>(), f3[2].get<int>()});
    }

    auto blob = [&](const std::string& name, Index rows, Index cols) {
        const auto& entry = m.at("blobs").at(name);
        std::filesystem::path p = dir / entry.at("file").get<std::string>();
        check(std::filesystem::exists(p), "loadTemplate: missing blob " + p.string());
        check(entry.at("bytes").get<size_t>() == size_t(rows * cols) * 4,
              "loadTemplate: blob byte length mismatch for " + name);
        return readBlob<S>(p, rows, cols);
    };
    tpl.vertices = blob("vertices", n, 3);
    tpl.joints = blob("joints", j, 3);
    tpl.weights = blob("weights", n, j);
    for (Index s = 0; s < m.at("n_shape").get<Index>(); ++s)
        tpl.shapeBasis.push_back(blob("shape_" + std::to_string(s), n, 3));
    for (Index e = 0; e < m.at("n_expr").get<Index>(); ++e)
        tpl.exprBasis.push_back(blob("expr_" + std::to_string(e), n, 3));

    tpl.validate();
    return tpl;
}

}  // namespace visa
