#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "visa/core/matrix.hpp"
#include "visa/core/random.hpp"

namespace visa {

enum class Part : int { Body = 0, Neck = 1, Face = 2, Hand = 3 };

inline const char* partName(Part p) {
    switch (p) {
        case Part::Body: return "body";
        case Part::Neck: return "neck";
        case Part::Face: return "face";
        case Part::Hand: return "hand";
    }
    return "body";
}

inline Part partFromName(const std::string& s) {
    if (s == "neck") return Part::Neck;
    if (s == "face") return Part::Face;
    if (s == "hand") return Part::Hand;
    if (s == "body") return Part::Body;
    throw InvalidInput("unknown part label: " + s);
}

/// Rest-pose rigged body: vertices with per-vertex skinning weights over a
/// joint chain, plus linear shape / expression displacement bases.
template <typename S>
struct BodyTemplate {
    MatX<S> vertices;                       // N x 3, rest pose
    std::vector<std::array<int, 3>> faces;  // triangle indices
    MatX<S> joints;                         // J x 3, rest joint positions
    std::vector<int> parents;               // parent[j] < j, root = -1
    std::vector<std::string> jointNames;
    MatX<S> weights;                  // N x J, rows nonneg, sum to 1
    std::vector<MatX<S>> shapeBasis;  // S entries of N x 3
    std::vector<MatX<S>> exprBasis;   // E entries of N x 3, face rows only
    std::vector<Part> partLabels;     // N entries

    Index numVertices() const { return vertices.rows(); }
    Index numJoints() const { return joints.rows(); }
    Index numShape() const { return Index(shapeBasis.size()); }
    Index numExpr() const { return Index(exprBasis.size()); }

    int jointIndex(const std::string& name) const {
        for (size_t j = 0; j < jointNames.size(); ++j)
            if (jointNames[j] == name) return int(j);
        return -1;
    }

    void validate() const {
        Index n = vertices.rows(), j = joints.rows();
        check(n >= 1 && vertices.cols() == 3, "template: vertices must be Nx3");
        check(j >= 1 && joints.cols() == 3, "template: joints must be Jx3");
        check(Index(parents.size()) == j && Index(jointNames.size()) == j,
              "template: parents/names must match joint count");
        check(parents[0] == -1, "template: joint 0 must be the root");
        for (Index k = 1; k < j; ++k)
            check(parents[k] >= 0 && parents[k] < int(k), "template: parent[j] must be < j");
        check(weights.rows() == n && weights.cols() == j, "template: weights must be NxJ");
        for (Index i = 0; i < n; ++i) {
            check(weights.row(i).minCoeff() >= S(0), "template: negative skin weight");
            check(std::abs(double(weights.row(i).sum()) - 1.0) < 1e-5,
                  "template: skin weights must sum to 1 per vertex");
        }
        check(Index(partLabels.size()) == n, "template: part labels must match vertex count");
        for (const auto& b : shapeBasis)
            check(b.rows() == n && b.cols() == 3, "template: shape basis entries must be Nx3");
        for (Index e = 0; e < Index(exprBasis.size()); ++e) {
            const auto& b = exprBasis[e];
            check(b.rows() == n && b.cols() == 3, "template: expr basis entries must be Nx3");
            for (Index i = 0; i < n; ++i)
                if (partLabels[i] != Part::Face)
                    check(b.row(i).norm() == S(0), "template: expr basis must touch face vertices only");
        }
        std::vector<char> referenced(size_t(n), 0);
        for (const auto& f : faces) {
            for (int v : f) {
                check(v >= 0 && v < int(n), "template: face index out of range");
                referenced[size_t(v)] = 1;
            }
        }
        if (n >= 3)
            for (Index i = 0; i < n; ++i)
                check(referenced[size_t(i)] == 1, "template: vertex not referenced by any face");
        check(allFinite(vertices) && allFinite(joints) && allFinite(weights),
              "template: non-finite data");
    }

    template <typename T>
    BodyTemplate<T> cast() const {
        BodyTemplate<T> out;
        out.vertices = vertices.template cast<T>();
        out.faces = faces;
        out.joints = joints.template cast<T>();
        out.parents = parents;
        out.jointNames = jointNames;
        out.weights = weights.template cast<T>();
        for (const auto& b : shapeBasis) out.shapeBasis.push_back(b.template cast<T>());
        for (const auto& b : exprBasis) out.exprBasis.push_back(b.template cast<T>());
        out.partLabels = partLabels;
        return out;
    }
};

namespace detail {

struct JointSpec {
    const char* name;
    int parent;
    double x, y, z;
    Part part;
    double radius;  // of the bone ending at this joint
};

// Canonical humanoid chain, meters, y up. Truncating to the first J entries
// always leaves a valid chain (parents precede children).
inline const std::vector<JointSpec>& skeletonSpec() {
    static const std::vector<JointSpec> spec = {
        {"root", -1, 0.0, 0.00, 0.0, Part::Body, 0.110},
        {"spine", 0, 0.0, 0.14, 0.0, Part::Body, 0.110},
        {"chest", 1, 0.0, 0.28, 0.0, Part::Body, 0.120},
        {"neck", 2, 0.0, 0.42, 0.0, Part::Neck, 0.035},
        {"head", 3, 0.0, 0.52, 0.0, Part::Face, 0.090},
        {"jaw", 4, 0.0, 0.49, 0.05, Part::Face, 0.045},
        {"l_shoulder", 2, 0.16, 0.36, 0.0, Part::Body, 0.050},
        {"l_elbow", 6, 0.38, 0.36, 0.0, Part::Body, 0.045},
        {"l_wrist", 7, 0.58, 0.36, 0.0, Part::Hand, 0.040},
        {"r_shoulder", 2, -0.16, 0.36, 0.0, Part::Body, 0.050},
        {"r_elbow", 9, -0.38, 0.36, 0.0, Part::Body, 0.045},
        {"r_wrist", 10, -0.58, 0.36, 0.0, Part::Hand, 0.040},
        {"l_hand", 8, 0.66, 0.36, 0.0, Part::Hand, 0.035},
        {"r_hand", 11, -0.66, 0.36, 0.0, Part::Hand, 0.035},
        {"l_fingers", 12, 0.72, 0.36, 0.0, Part::Hand, 0.025},
        {"r_fingers", 13, -0.72, 0.36, 0.0, Part::Hand, 0.025},
    };
    return spec;
}

template <typename S>
struct BoneGeom {
    int joint;  // joint whose column this bone feeds
    Vec3<S> p0, p1;
    S radius;
    Part part;
    bool sphere;  // sample a ball around p1 instead of a tube
};

template <typename S>
S pointSegmentDistance(const Vec3<S>& p, const Vec3<S>& a, const Vec3<S>& b) {
    Vec3<S> ab = b - a;
    S len2 = ab.squaredNorm();
    if (len2 <= S(0)) return (p - a).norm();
    S t = std::clamp((p - a).dot(ab) / len2, S(0), S(1));
    return (p - (a + t * ab)).norm();
}

template <typename S>
void orthonormalFrame(const Vec3<S>& axis, Vec3<S>& u, Vec3<S>& w) {
    Vec3<S> n = axis.normalized();
    Vec3<S> pick = std::abs(n.x()) < S(0.9) ? Vec3<S>(1, 0, 0) : Vec3<S>(0, 1, 0);
    u = n.cross(pick).normalized();
    w = n.cross(u);
}

/// Splits `total` across bones proportionally to an area surrogate, exactly.
template <typename S>
std::vector<Index> apportion(const std::vector<BoneGeom<S>>& bones, Index total) {
    std::vector<double> score(bones.size());
    double sum = 0;
    for (size_t b = 0; b < bones.size(); ++b) {
        double len = double((bones[b].p1 - bones[b].p0).norm());
        if (bones[b].sphere) len = std::max(len, 2.0 * double(bones[b].radius));
        score[b] = std::max(1e-6, len * double(bones[b].radius));
        sum += score[b];
    }
    std::vector<Index> cnt(bones.size(), 0);
    std::vector<std::pair<double, size_t>> rem;
    Index given = 0;
    for (size_t b = 0; b < bones.size(); ++b) {
        double exact = double(total) * score[b] / sum;
        cnt[b] = Index(std::floor(exact));
        given += cnt[b];
        rem.push_back({exact - std::floor(exact), b});
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (Index k = 0; k < total - given; ++k) cnt[rem[size_t(k)].second]++;
    return cnt;
}

/// Emits surface samples for one bone, ordered along the bone so that
/// consecutive vertices are spatial neighbours.
template <typename S>
void sampleBone(const BoneGeom<S>& bone, Index count, Rng& rng, MatX<S>& verts, Index row) {
    constexpr double kGolden = 2.39996322972865332;
    if (bone.sphere) {
        for (Index i = 0; i < count; ++i) {
            double band = (double(i) + 0.2 + 0.6 * rng.uniform()) / double(count);
            double y = -1.0 + 2.0 * band;  // increasing: bottom to top
            double r = std::sqrt(std::max(0.0, 1.0 - y * y));
            double phi = kGolden * double(i) + 0.3 * rng.uniform();
            Vec3<S> dir(S(r * std::cos(phi)), S(y), S(r * std::sin(phi)));
            verts.row(row++) = (bone.p1 + bone.radius * dir).transpose();
        }
        return;
    }
    Vec3<S> u, w;
    Vec3<S> axis = bone.p1 - bone.p0;
    if (axis.norm() < S(1e-9)) axis = Vec3<S>(0, 1, 0);
    orthonormalFrame(axis, u, w);
    for (Index i = 0; i < count; ++i) {
        double t = (double(i) + 0.2 + 0.6 * rng.uniform()) / double(count);
        double phi = kGolden * double(i) + 0.3 * rng.uniform();
        Vec3<S> p = bone.p0 + S(t) * (bone.p1 - bone.p0) +
                    bone.radius * (S(std::cos(phi)) * u + S(std::sin(phi)) * w);
        verts.row(row++) = p.transpose();
    }
}

/// Skin weights from bone proximity: RBF over point-to-bone distances,
/// truncated to the top 4 joints and renormalised.
template <typename S>
MatX<S> skinFromBones(const MatX<S>& verts, const std::vector<BoneGeom<S>>& bones, Index numJoints,
                      S tau) {
    Index n = verts.rows();
    MatX<S> w = MatX<S>::Zero(n, numJoints);
    for (Index i = 0; i < n; ++i) {
        Vec3<S> p = verts.row(i).transpose();
        VecX<S> raw = VecX<S>::Zero(numJoints);
        for (const auto& b : bones) {
            S d = pointSegmentDistance(p, b.p0, b.p1);
            if (b.sphere) d = std::max(S(0), (p - b.p1).norm() - b.radius * S(0.5));
            S v = std::exp(-(d / tau) * (d / tau));
            raw(b.joint) = std::max(raw(b.joint), v);
        }
        std::vector<Index> order(static_cast<size_t>(numJoints));
        for (Index j = 0; j < numJoints; ++j) order[size_t(j)] = j;
        std::stable_sort(order.begin(), order.end(),
                         [&](Index a, Index b) { return raw(a) > raw(b); });
        Index keep = std::min<Index>(4, numJoints);
        S sum = 0;
        for (Index k = 0; k < keep; ++k) sum += raw(order[size_t(k)]);
        if (sum <= S(0)) {
            w(i, 0) = S(1);  // far from every bone: bind to root
            continue;
        }
        for (Index k = 0; k < keep; ++k) w(i, order[size_t(k)]) = raw(order[size_t(k)]) / sum;
    }
    return w;
}

template <typename S>
std::vector<std::array<int, 3>> stripFaces(Index n) {
    std::vector<std::array<int, 3>> f;
    for (Index i = 0; i + 2 < n; ++i) f.push_back({int(i), int(i + 1), int(i + 2)});
    return f;
}

template <typename S>
void buildBases(BodyTemplate<S>& tpl, const Vec3<S>& headCenter, const Vec3<S>& jawPos) {
    Index n = tpl.vertices.rows();
    tpl.shapeBasis.assign(4, MatX<S>::Zero(n, 3));
    tpl.exprBasis.assign(4, MatX<S>::Zero(n, 3));
    for (Index i = 0; i < n; ++i) {
        Vec3<S> v = tpl.vertices.row(i).transpose();
        bool face = tpl.partLabels[size_t(i)] == Part::Face;
        // Shape: stature, girth, shoulder width, head size.
        tpl.shapeBasis[0].row(i) = Vec3<S>(0, S(0.08) * v.y(), 0).transpose();
        tpl.shapeBasis[1].row(i) = (S(0.06) * Vec3<S>(v.x(), 0, v.z())).transpose();
        S g = std::exp(-std::pow((double(v.y()) - 0.36) / 0.1, 2.0));
        tpl.shapeBasis[2].row(i) = Vec3<S>(S(0.08) * v.x() * g, 0, 0).transpose();
        if (face) tpl.shapeBasis[3].row(i) = (S(0.08) * (v - headCenter)).transpose();
        if (!face) continue;
        // Expression: jaw open, mouth widen, brow raise, cheek puff.
        S jawProx = std::exp(-std::pow(double((v - jawPos).norm()) / 0.06, 2.0));
        tpl.exprBasis[0].row(i) = (jawProx * Vec3<S>(0, S(-0.02), S(0.01))).transpose();
        S sx = v.x() >= S(0) ? S(1) : S(-1);
        tpl.exprBasis[1].row(i) = (jawProx * Vec3<S>(S(0.02) * sx, 0, 0)).transpose();
        if (v.y() > headCenter.y()) tpl.exprBasis[2].row(i) = Vec3<S>(0, S(0.015), 0).transpose();
        Vec3<S> radial(v.x() - headCenter.x(), 0, v.z() - headCenter.z());
        S mid = std::exp(-std::pow((double(v.y()) - double(headCenter.y())) / 0.05, 2.0));
        tpl.exprBasis[3].row(i) = (S(0.015) * mid * radial).transpose();
    }
}

}  // namespace detail

/// Procedurally builds the rigged humanoid: nBody samples over torso/arm
/// bones, nHead over the head sphere and jaw, a joint chain truncated to
/// nJoints entries of the canonical skeleton. Deterministic in the seed.
template <typename S = double>
BodyTemplate<S> makeTemplate(Index nBody, Index nHead, Index nJoints, uint64_t seed) {
    using detail::BoneGeom;
    const auto& spec = detail::skeletonSpec();
    check(nBody >= 4 && nHead >= 4, "makeTemplate: need at least 4 body and 4 head vertices");
    check(nJoints >= 4 && nJoints <= Index(spec.size()),
          "makeTemplate: joint count out of range (4..16)");

    BodyTemplate<S> tpl;
    tpl.joints.resize(nJoints, 3);
    for (Index j = 0; j < nJoints; ++j) {
        tpl.joints.row(j) << S(spec[size_t(j)].x), S(spec[size_t(j)].y), S(spec[size_t(j)].z);
        tpl.parents.push_back(spec[size_t(j)].parent);
        tpl.jointNames.push_back(spec[size_t(j)].name);
    }

    std::vector<BoneGeom<S>> bodyBones, headBones;
    {  // root stub reaches below the pelvis so joint 0 owns some surface
        BoneGeom<S> stub{0, Vec3<S>(0, S(-0.12), 0), Vec3<S>(0, 0, 0), S(spec[0].radius),
                         Part::Body, false};
        bodyBones.push_back(stub);
    }
    for (Index j = 1; j < nJoints; ++j) {
        const auto& sp = spec[size_t(j)];
        BoneGeom<S> b{int(j), Vec3<S>(tpl.joints.row(sp.parent).transpose()),
                      Vec3<S>(tpl.joints.row(j).transpose()), S(sp.radius), sp.part,
                      std::string(sp.name) == "head"};
        (sp.part == Part::Face ? headBones : bodyBones).push_back(b);
    }
    bool hasHeadBones = !headBones.empty();
    check(hasHeadBones || nJoints <= 4, "makeTemplate: internal bone partition error");
    if (!hasHeadBones) {
        // Chain truncated before the head joint: hang head samples off the last joint.
        Vec3<S> tip = Vec3<S>(tpl.joints.row(nJoints - 1).transpose()) + Vec3<S>(0, S(0.1), 0);
        BoneGeom<S> b{int(nJoints - 1), Vec3<S>(tpl.joints.row(nJoints - 1).transpose()), tip,
                      S(0.09), Part::Face, true};
        headBones.push_back(b);
    }

    Rng rng = Rng::keyed(seed, 0x7e31, nBody, nHead * 131 + nJoints);
    tpl.vertices.resize(nBody + nHead, 3);
    Index row = 0;
    auto emit = [&](const std::vector<BoneGeom<S>>& bones, Index total) {
        auto counts = detail::apportion(bones, total);
        for (size_t b = 0; b < bones.size(); ++b) {
            detail::sampleBone(bones[b], counts[b], rng, tpl.vertices, row);
            for (Index k = 0; k < counts[b]; ++k) tpl.partLabels.push_back(bones[b].part);
            row += counts[b];
        }
    };
    emit(bodyBones, nBody);
    emit(headBones, nHead);

    std::vector<BoneGeom<S>> allBones = bodyBones;
    allBones.insert(allBones.end(), headBones.begin(), headBones.end());
    tpl.weights = detail::skinFromBones(tpl.vertices, allBones, nJoints, S(0.07));
    tpl.faces = detail::stripFaces<S>(nBody + nHead);

    Vec3<S> headCenter = headBones.front().p1;
    Vec3<S> jawPos = headCenter + Vec3<S>(0, S(-0.03), S(0.05));
    if (int jj = tpl.jointIndex("jaw"); jj >= 0) jawPos = tpl.joints.row(jj).transpose();
    detail::buildBases(tpl, headCenter, jawPos);
    tpl.validate();
    return tpl;
}

/// Head-only capture rig: a three-joint chain (neck root, head, jaw) with a
/// deliberate collar of neck-bound vertices below the skull, so grafting has
/// something to trim.
template <typename S = double>
BodyTemplate<S> makeHeadTemplate(Index nVerts, uint64_t seed) {
    using detail::BoneGeom;
    check(nVerts >= 8, "makeHeadTemplate: need at least 8 vertices");
    BodyTemplate<S> tpl;
    tpl.joints.resize(3, 3);
    tpl.joints << S(0), S(0.42), S(0), S(0), S(0.52), S(0), S(0), S(0.49), S(0.05);
    tpl.parents = {-1, 0, 1};
    tpl.jointNames = {"neck", "head", "jaw"};

    std::vector<BoneGeom<S>> bones;
    bones.push_back({0, Vec3<S>(0, S(0.34), 0), Vec3<S>(0, S(0.42), 0), S(0.035), Part::Neck,
                     false});  // collar
    bones.push_back({1, Vec3<S>(tpl.joints.row(0).transpose()),
                     Vec3<S>(tpl.joints.row(1).transpose()), S(0.09), Part::Face, true});
    bones.push_back({2, Vec3<S>(tpl.joints.row(1).transpose()),
                     Vec3<S>(tpl.joints.row(2).transpose()), S(0.045), Part::Face, false});

    Index nCollar = std::max<Index>(2, nVerts / 4);
    Index nJaw = std::max<Index>(2, nVerts / 8);
    Index nSkull = nVerts - nCollar - nJaw;
    check(nSkull >= 2, "makeHeadTemplate: vertex budget too small");

    Rng rng = Rng::keyed(seed, 0x4ead, nVerts, 0);
    tpl.vertices.resize(nVerts, 3);
    Index row = 0;
    std::array<Index, 3> counts = {nCollar, nSkull, nJaw};
    for (size_t b = 0; b < bones.size(); ++b) {
        detail::sampleBone(bones[b], counts[b], rng, tpl.vertices, row);
        for (Index k = 0; k < counts[b]; ++k) tpl.partLabels.push_back(bones[b].part);
        row += counts[b];
    }
    tpl.weights = detail::skinFromBones(tpl.vertices, bones, 3, S(0.05));
    // Collar samples must bind to the neck so the graft trim has work to do.
    for (Index i = 0; i < nCollar; ++i) {
        VecX<S> r = tpl.weights.row(i).transpose();
        Index amax = 0;
        r.maxCoeff(&amax);
        if (amax != 0) {
            S boost = r(amax) + S(0.01);
            r(0) = boost;
            r /= r.sum();
            tpl.weights.row(i) = r.transpose();
        }
    }
    tpl.faces = detail::stripFaces<S>(nVerts);
    detail::buildBases(tpl, Vec3<S>(tpl.joints.row(1).transpose()),
                       Vec3<S>(tpl.joints.row(2).transpose()));
    tpl.validate();
    return tpl;
}

/// Vertices whose strongest skinning weight lands on `idNeck`; argmax ties go
/// to the lowest joint index. Returns ascending vertex indices.
template <typename S>
std::vector<Index> findNeckVertices(const MatX<S>& weights, Index idNeck) {
    check(weights.rows() >= 1 && weights.cols() >= 1, "findNeckVertices: empty weight matrix");
    check(idNeck >= 0 && idNeck < weights.cols(), "findNeckVertices: joint index out of range");
    for (Index i = 0; i < weights.rows(); ++i) {
        check(weights.row(i).minCoeff() >= S(0) &&
                  std::abs(double(weights.row(i).sum()) - 1.0) < 1e-5,
              "findNeckVertices: weights must be row-stochastic");
    }
    std::vector<Index> out;
    for (Index i = 0; i < weights.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < weights.cols(); ++j)
            if (weights(i, j) > weights(i, best)) best = j;  // strict: ties keep lowest
        if (best == idNeck) out.push_back(i);
    }
    return out;
}

/// Replaces the donor head's neck-bound vertices and welds the rest onto the
/// body rig. Donor joints are matched to body joints by name; donor weights
/// land in the matched columns and rows are renormalised.
template <typename S>
BodyTemplate<S> graftHead(const BodyTemplate<S>& body, const BodyTemplate<S>& head, Index idNeck) {
    body.validate();
    head.validate();
    check(body.numShape() == head.numShape() && body.numExpr() == head.numExpr(),
          "graftHead: basis dimensions must match");

    std::vector<Index> jointMap(size_t(head.numJoints()));
    for (Index j = 0; j < head.numJoints(); ++j) {
        int m = body.jointIndex(head.jointNames[size_t(j)]);
        check(m >= 0, "graftHead: body skeleton lacks joint '" + head.jointNames[size_t(j)] + "'");
        jointMap[size_t(j)] = m;
    }

    std::vector<Index> neckVerts = findNeckVertices(head.weights, idNeck);
    std::vector<char> removed(size_t(head.numVertices()), 0);
    for (Index v : neckVerts) removed[size_t(v)] = 1;
    Index keptHead = head.numVertices() - Index(neckVerts.size());
    check(keptHead >= 3, "graftHead: donor head fully consumed by neck trim");

    Index nb = body.numVertices();
    BodyTemplate<S> out;
    out.joints = body.joints;
    out.parents = body.parents;
    out.jointNames = body.jointNames;

    std::vector<Index> remap(size_t(head.numVertices()), -1);
    out.vertices.resize(nb + keptHead, 3);
    out.vertices.topRows(nb) = body.vertices;
    out.weights = MatX<S>::Zero(nb + keptHead, body.numJoints());
    out.weights.topLeftCorner(nb, body.numJoints()) = body.weights;
    out.partLabels = body.partLabels;
    Index row = nb;
    for (Index i = 0; i < head.numVertices(); ++i) {
        if (removed[size_t(i)]) continue;
        remap[size_t(i)] = row;
        out.vertices.row(row) = head.vertices.row(i);
        for (Index j = 0; j < head.numJoints(); ++j)
            out.weights(row, jointMap[size_t(j)]) += head.weights(i, j);
        S sum = out.weights.row(row).sum();
        check(sum > S(0), "graftHead: donor vertex lost all weight");
        out.weights.row(row) /= sum;
        out.partLabels.push_back(head.partLabels[size_t(i)]);
        ++row;
    }

    for (Index s = 0; s < body.numShape(); ++s) {
        MatX<S> b = MatX<S>::Zero(nb + keptHead, 3);
        b.topRows(nb) = body.shapeBasis[size_t(s)];
        for (Index i = 0; i < head.numVertices(); ++i)
            if (remap[size_t(i)] >= 0) b.row(remap[size_t(i)]) = head.shapeBasis[size_t(s)].row(i);
        out.shapeBasis.push_back(std::move(b));
    }
    for (Index e = 0; e < body.numExpr(); ++e) {
        MatX<S> b = MatX<S>::Zero(nb + keptHead, 3);
        b.topRows(nb) = body.exprBasis[size_t(e)];
        for (Index i = 0; i < head.numVertices(); ++i)
            if (remap[size_t(i)] >= 0) b.row(remap[size_t(i)]) = head.exprBasis[size_t(e)].row(i);
        out.exprBasis.push_back(std::move(b));
    }

    out.faces = body.faces;
    for (const auto& f : head.faces) {
        std::array<int, 3> g;
        bool keep = true;
        for (int k = 0; k < 3; ++k) {
            Index m = remap[size_t(f[size_t(k)])];
            if (m < 0) {
                keep = false;
                break;
            }
            g[size_t(k)] = int(m);
        }
        if (keep) out.faces.push_back(g);
    }

    // Weld + repair: make sure every surviving vertex still borders a face.
    std::vector<char> referenced(size_t(out.vertices.rows()), 0);
    for (const auto& f : out.faces)
        for (int v : f) referenced[size_t(v)] = 1;
    auto nearestReferenced = [&](Index v) {
        Index best = -1;
        S bestD = std::numeric_limits<S>::max();
        for (Index u = 0; u < out.vertices.rows(); ++u) {
            if (u == v || !referenced[size_t(u)]) continue;
            S d = (out.vertices.row(u) - out.vertices.row(v)).norm();
            if (d < bestD) {
                bestD = d;
                best = u;
            }
        }
        return best;
    };
    for (Index v = 0; v < out.vertices.rows(); ++v) {
        if (referenced[size_t(v)]) continue;
        Index a = nearestReferenced(v);
        check(a >= 0, "graftHead: cannot repair face coverage");
        Index b = nearestReferenced(a);
        out.faces.push_back({int(v), int(a), int(b)});
        referenced[size_t(v)] = 1;
    }
    // Stitch the donor head onto the body so the fused mesh is one component.
    if (keptHead >= 2 && nb >= 1) {
        Index h0 = nb, h1 = nb + 1;
        Index bodyNear = 0;
        S bestD = std::numeric_limits<S>::max();
        for (Index u = 0; u < nb; ++u) {
            S d = (out.vertices.row(u) - out.vertices.row(h0)).norm();
            if (d < bestD) {
                bestD = d;
                bodyNear = u;
            }
        }
        out.faces.push_back({int(bodyNear), int(h0), int(h1)});
    }

    out.validate();
    return out;
}

}  // namespace visa
