#pragma once

// Dataset access for training and evaluation: manifest parsing, temporal
// frame sampling, horizontal-flip and temporal-jitter augmentation, and batch
// assembly (frames + keypoint-derived entity boxes).

#include <filesystem>
#include <fstream>
#include <map>

#include "mdn/image_io.hpp"
#include "mdn/model.hpp"
#include "mdn/pose.hpp"

namespace mdn {

struct ManifestEntry {
    std::string id;
    std::string split;  // train | val | test
    int64_t body_label = 0;
    int64_t action_label = 0;
};

struct Dataset {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    int64_t num_actions = 0;
    int64_t num_bodies = 0;
    std::vector<int64_t> action_to_body;
    bool png_frames = false;

    std::vector<size_t> split_indices(const std::string& split) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < entries.size(); ++i)
            if (entries[i].split == split) out.push_back(i);
        return out;
    }
};

inline Dataset load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.root = root;
    std::ifstream in(root / "manifest.csv");
    check<IoError>(in.good(), "cannot open manifest: ", (root / "manifest.csv").string());
    std::string line;
    std::getline(in, line);
    check<IoError>(line == "sample_id,split,body_label,action_label",
                   "manifest header mismatch: '", line, "'");
    size_t line_no = 1;
    std::map<int64_t, int64_t> a2b;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        ManifestEntry e;
        std::string body, action;
        check<IoError>(static_cast<bool>(std::getline(ss, e.id, ',')) &&
                           static_cast<bool>(std::getline(ss, e.split, ',')) &&
                           static_cast<bool>(std::getline(ss, body, ',')) &&
                           static_cast<bool>(std::getline(ss, action, ',')),
                       "manifest line ", line_no, ": expected 4 cells");
        try {
            e.body_label = std::stoll(body);
            e.action_label = std::stoll(action);
        } catch (const std::exception&) {
            fail<IoError>("manifest line ", line_no, ": non-numeric label");
        }
        ds.num_actions = std::max(ds.num_actions, e.action_label + 1);
        ds.num_bodies = std::max(ds.num_bodies, e.body_label + 1);
        auto it = a2b.find(e.action_label);
        if (it == a2b.end())
            a2b[e.action_label] = e.body_label;
        else
            check<IoError>(it->second == e.body_label, "manifest line ", line_no, ": action ",
                           e.action_label, " maps to two body labels");
        ds.entries.push_back(std::move(e));
    }
    check<IoError>(!ds.entries.empty(), "manifest has no samples: ", root.string());
    ds.action_to_body.assign(ds.num_actions, 0);
    for (const auto& [a, b] : a2b) ds.action_to_body[a] = b;
    ds.png_frames = !fs::exists(root / "frames" / (ds.entries[0].id + ".mdnvid"));
    return ds;
}

// Frame index selection: T frames at the given stride; training jitters the
// start offset, evaluation uses the centered window. If the strided span
// exceeds the clip, the stride degrades to the largest one that fits.
inline std::vector<int64_t> sample_frame_ids(int64_t duration, int64_t frames, int64_t stride,
                                             bool jitter, Rng& rng) {
    check<Error>(frames >= 1 && duration >= 1, "sample_frame_ids: bad frames/duration");
    int64_t s = std::max<int64_t>(1, stride);
    while (frames > 1 && (frames - 1) * s + 1 > duration && s > 1) --s;
    const int64_t span = (frames - 1) * s + 1;
    int64_t start = 0;
    if (span <= duration) {
        const int64_t slack = duration - span;
        if (jitter && slack > 0) {
            std::uniform_int_distribution<int64_t> u(0, slack);
            start = u(rng);
        } else {
            start = slack / 2;
        }
    }
    std::vector<int64_t> ids(frames);
    for (int64_t i = 0; i < frames; ++i) ids[i] = std::min(duration - 1, start + i * s);
    return ids;
}

// BODY-25 left/right counterparts for the horizontal flip.
inline const std::array<int, kNumKeypoints>& lr_swap_map() {
    static const std::array<int, kNumKeypoints> swap = {0,  1,  5,  6,  7,  2,  3,  4,  8,
                                                        12, 13, 14, 9,  10, 11, 16, 15, 18,
                                                        17, 22, 23, 24, 19, 20, 21};
    return swap;
}

inline FrameSkeleton flip_skeleton(const FrameSkeleton& skel, double width) {
    FrameSkeleton out{};
    const auto& swap = lr_swap_map();
    for (int j = 0; j < kNumKeypoints; ++j) {
        const auto& src = skel.keypoints[swap[j]];
        out.keypoints[j] = {width - 1.0 - src.x, src.y, src.c};
    }
    return out;
}

struct LoaderConfig {
    int64_t frames = 8;
    int64_t stride = 1;
    double theta = 0.3;
    double pad_frac = 0.10;
    bool augment = false;       // train-time flip + temporal jitter
    double flip_prob = 0.5;
};

// Assembles one batch; augmentation draws (flip decision, temporal offset)
// come from aug_rng in a fixed per-sample order, so runs are reproducible.
template <typename S>
Batch<S> make_batch(const Dataset& ds, const std::vector<size_t>& sample_ids,
                    const std::vector<EntityDef>& defs, const LoaderConfig& cfg, Rng& aug_rng) {
    Batch<S> batch;
    const int64_t b = static_cast<int64_t>(sample_ids.size());
    check<Error>(b > 0, "make_batch: empty batch");
    std::vector<Tensor<S>> frame_parts;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (size_t idx : sample_ids) {
        const auto& entry = ds.entries[idx];
        const auto video_path = ds.png_frames ? ds.root / "frames" / entry.id
                                              : ds.root / "frames" / (entry.id + ".mdnvid");
        auto video = load_video(video_path);
        auto skeleton = load_keypoints(ds.root / "keypoints" / (entry.id + ".jsonl"));
        check<IoError>(static_cast<int64_t>(skeleton.size()) == video.frames(),
                       "sample ", entry.id, ": ", skeleton.size(), " skeletons for ",
                       video.frames(), " frames");
        const bool flip = cfg.augment && u01(aug_rng) < cfg.flip_prob;
        auto ids = sample_frame_ids(video.frames(), cfg.frames, cfg.stride, cfg.augment, aug_rng);

        auto frames = frames_to_tensor<S>(video, ids);  // (T,3,H,W)
        const int64_t h = video.height(), w = video.width();
        if (flip) {
            auto flipped = Tensor<S>::zeros(frames.shape());
            const int64_t planes = frames.numel() / w;
            for (int64_t p = 0; p < planes; ++p)
                for (int64_t x = 0; x < w; ++x)
                    flipped.data()[p * w + x] = frames.data()[p * w + (w - 1 - x)];
            frames = flipped;
        }
        Shape bshape = frames.shape();
        bshape.insert(bshape.begin(), 1);
        frame_parts.push_back(reshape(frames, bshape));

        std::vector<FrameSkeleton> selected;
        for (int64_t t : ids)
            selected.push_back(flip ? flip_skeleton(skeleton[t], static_cast<double>(w))
                                    : skeleton[t]);
        batch.boxes.push_back(entity_box_tracks(selected, defs, cfg.theta, cfg.pad_frac,
                                                static_cast<double>(w),
                                                static_cast<double>(h)));
        batch.labels.push_back(entry.action_label);
        batch.body_labels.push_back(entry.body_label);
    }
    batch.frames = concat(frame_parts, 0);
    return batch;
}

}  // namespace mdn
