#pragma once

#include "visa/curation/clip.hpp"

#include <set>
#include <vector>

namespace visa {

/// Mean over keypoints of the temporal population variance of their pixel
/// positions (u and v variances summed per keypoint).
inline double keypointMotionVariance(const ClipRecord& clip) {
    clip.validate();
    Index k = clip.keypoints.front().rows();
    int tN = clip.frameCount;
    double acc = 0.0;
    for (Index i = 0; i < k; ++i) {
        for (int axis = 0; axis < 2; ++axis) {
            double mean = 0.0;
            for (int f = 0; f < tN; ++f) mean += clip.keypoints[size_t(f)](i, axis);
            mean /= tN;
            double var = 0.0;
            for (int f = 0; f < tN; ++f) {
                double d = clip.keypoints[size_t(f)](i, axis) - mean;
                var += d * d;
            }
            acc += var / tN;  // population variance
        }
    }
    return acc / double(k);
}

/// Keep unless the mean keypoint motion variance falls below the threshold
/// (equality keeps).
inline bool passesStaticFilter(const ClipRecord& clip, double varThreshold) {
    return keypointMotionVariance(clip) >= varThreshold;
}

/// Mean confidence per required part must reach the threshold (equality
/// keeps). Parts with no joints are vacuously fine. Returns the failing part
/// name through `failedPart` when rejecting.
inline bool passesConfidenceFilter(const ClipRecord& clip,
                                   const std::vector<std::string>& jointNames,
                                   double confThreshold,
                                   const std::set<Part>& parts = {Part::Face, Part::Hand},
                                   std::string* failedPart = nullptr) {
    clip.validate();
    check(Index(jointNames.size()) == clip.confidences.front().size(),
          "confidence filter: joint name count must match keypoint count");
    for (Part part : parts) {
        double sum = 0.0;
        long count = 0;
        for (size_t j = 0; j < jointNames.size(); ++j) {
            if (jointPart(jointNames[j]) != part) continue;
            for (int f = 0; f < clip.frameCount; ++f) sum += clip.confidences[size_t(f)](Index(j));
            count += clip.frameCount;
        }
        if (count == 0) continue;
        if (sum / double(count) < confThreshold) {
            if (failedPart) *failedPart = partName(part);
            return false;
        }
    }
    return true;
}

/// Keep unless the refined reprojection error exceeds the threshold
/// (equality keeps).
inline bool passesReprojectionFilter(const ClipRecord& clip, double errThreshold) {
    return clip.reprojError <= errThreshold;
}

}  // namespace visa
