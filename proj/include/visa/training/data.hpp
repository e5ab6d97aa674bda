#pragma once

#include "visa/core/image.hpp"
#include "visa/core/random.hpp"
#include "visa/curation/clip.hpp"

#include <string>
#include <vector>

namespace visa {

/// A curated clip pulled fully into memory: per-frame pose parameters,
/// RGB frames, and foreground masks, all in [0,1].
template <typename S>
struct TrainClip {
    std::string id;
    Camera<S> cam;
    std::vector<PoseShapeParams<S>> params;
    std::vector<Image<S>> frames;
    std::vector<Image<S>> masks;

    int frameCount() const { return int(frames.size()); }
};

template <typename S>
PoseShapeParams<S> castParams(const PoseShapeParams<double>& p) {
    PoseShapeParams<S> out;
    out.quats = p.quats.template cast<S>();
    out.translation = p.translation.template cast<S>();
    out.shape = p.shape.template cast<S>();
    out.expr = p.expr.template cast<S>();
    return out;
}

template <typename S>
TrainClip<S> loadTrainClip(const ClipRecord& rec) {
    TrainClip<S> out;
    out.id = rec.id;
    out.cam = rec.camera.template cast<S>();
    for (int f = 0; f < rec.frameCount; ++f) {
        out.params.push_back(castParams<S>(rec.params[size_t(f)]));
        out.frames.push_back(readPng(rec.framePath(f).string()).template cast<S>());
        out.masks.push_back(readPng(rec.maskPath(f).string()).template cast<S>());
        check(out.masks.back().c == 1, "train_clip: masks must be single channel");
    }
    check(!out.frames.empty(), "train_clip: empty clip " + rec.id);
    return out;
}

/// One element of a training batch: a clip, a driving window, and the frame
/// the per-step render loss is evaluated on.
struct BatchItem {
    size_t clip = 0;
    int start = 0;
    int evalFrame = 0;
};

template <typename S>
std::vector<BatchItem> sampleBatch(const std::vector<TrainClip<S>>& clips, int clipFrames,
                                   int batchSize, Rng& rng) {
    check(!clips.empty(), "sample_batch: no clips");
    std::vector<BatchItem> batch;
    for (int b = 0; b < batchSize; ++b) {
        BatchItem it;
        it.clip = size_t(rng.integer(0, int(clips.size()) - 1));
        int slack = clips[it.clip].frameCount() - clipFrames;
        check(slack >= 0, "sample_batch: clip shorter than the training window");
        it.start = slack == 0 ? 0 : rng.integer(0, slack);
        it.evalFrame = it.start + rng.integer(0, clipFrames - 1);
        batch.push_back(it);
    }
    return batch;
}

}  // namespace visa
