#pragma once

// BODY-25 skeleton parsing and the keypoint-guided spatial entity geometry:
// visibility gating, dynamic bounding boxes with temporal fallback, and
// per-entity confidence.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdn/common.hpp"

namespace mdn {

inline constexpr int kNumKeypoints = 25;

struct Keypoint {
    double x = 0;
    double y = 0;
    double c = 0;  // detection confidence in [0,1]
};

struct FrameSkeleton {
    std::array<Keypoint, kNumKeypoints> keypoints{};
};

struct EntityDef {
    int id = 0;
    std::string name;
    std::vector<int> joints;
    int hierarchy_level = 0;  // 0 head/face, 1 torso, 2 limbs
};

enum class BoxSource { kComputed, kCarriedForward, kInvalid };

inline const char* box_source_name(BoxSource s) {
    switch (s) {
        case BoxSource::kComputed: return "computed";
        case BoxSource::kCarriedForward: return "carried-forward";
        default: return "invalid";
    }
}

struct EntityBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    bool visible = false;
    double confidence = 0;
    BoxSource source = BoxSource::kInvalid;

    bool usable() const { return source != BoxSource::kInvalid; }
};

enum class DatasetKind { kMa52Like, kImigueLike };

inline DatasetKind dataset_kind_from(const std::string& s) {
    if (s == "ma52-like") return DatasetKind::kMa52Like;
    if (s == "imigue-like") return DatasetKind::kImigueLike;
    fail<ConfigError>("unknown dataset kind '", s, "' (expected ma52-like or imigue-like)");
}

// BODY-25 joint groupings. Neck (1) anchors head and torso; shoulders (2, 5)
// are shared between the torso and the hand chains.
inline std::vector<EntityDef> default_entity_defs(DatasetKind kind) {
    std::vector<EntityDef> defs = {
        {0, "head", {1, 17, 18}, 0},
        {1, "face", {0, 15, 16}, 0},
        {2, "left_hand", {5, 6, 7}, 2},
        {3, "right_hand", {2, 3, 4}, 2},
        {4, "torso", {1, 2, 5, 8}, 1},
        {5, "lower_body", {9, 10, 11, 12, 13, 14, 19, 20, 21, 22, 23, 24}, 2},
    };
    if (kind == DatasetKind::kImigueLike) defs.pop_back();  // seated subjects: no lower body
    return defs;
}

// Joints of the entity whose confidence strictly exceeds theta.
inline std::vector<int> visible_set(const FrameSkeleton& skel, const EntityDef& def,
                                    double theta) {
    check<Error>(theta >= 0.0 && theta <= 1.0, "visible_set: theta must be in [0,1], got ", theta);
    std::vector<int> out;
    for (int j : def.joints)
        if (skel.keypoints[j].c > theta) out.push_back(j);
    return out;
}

// Mean confidence over visible joints; 0 when fewer than two are visible.
inline double entity_confidence(const FrameSkeleton& skel, const EntityDef& def,
                                double theta = 0.3) {
    const auto vis = visible_set(skel, def, theta);
    if (vis.size() < 2) return 0.0;
    double acc = 0;
    for (int j : vis) acc += skel.keypoints[j].c;
    return acc / static_cast<double>(vis.size());
}

// Minimum enclosing rectangle of the visible joints, padded per side by
// pad_frac of the box extent, then clamped to the image. Falls back to the
// previous frame's box, and to an invalid box once the chain is exhausted.
inline EntityBox compute_entity_box(const FrameSkeleton& skel, const EntityDef& def,
                                    const EntityBox* prev, double theta, double pad_frac,
                                    double img_w, double img_h) {
    check<Error>(pad_frac >= 0.0, "compute_entity_box: pad_frac must be >= 0, got ", pad_frac);
    const auto vis = visible_set(skel, def, theta);
    if (vis.size() >= 2) {
        EntityBox box;
        box.x_min = box.x_max = skel.keypoints[vis[0]].x;
        box.y_min = box.y_max = skel.keypoints[vis[0]].y;
        for (int j : vis) {
            box.x_min = std::min(box.x_min, skel.keypoints[j].x);
            box.x_max = std::max(box.x_max, skel.keypoints[j].x);
            box.y_min = std::min(box.y_min, skel.keypoints[j].y);
            box.y_max = std::max(box.y_max, skel.keypoints[j].y);
        }
        const double pw = pad_frac * (box.x_max - box.x_min);
        const double ph = pad_frac * (box.y_max - box.y_min);
        box.x_min = std::max(0.0, box.x_min - pw);
        box.x_max = std::min(img_w, box.x_max + pw);
        box.y_min = std::max(0.0, box.y_min - ph);
        box.y_max = std::min(img_h, box.y_max + ph);
        box.visible = true;
        box.source = BoxSource::kComputed;
        box.confidence = entity_confidence(skel, def, theta);
        return box;
    }
    if (prev != nullptr && prev->source != BoxSource::kInvalid) {
        EntityBox box = *prev;
        box.visible = false;
        box.source = BoxSource::kCarriedForward;
        box.confidence = 0.0;
        return box;
    }
    return EntityBox{};
}

// Sequential left fold over frames: T x K boxes with temporal fallback.
inline std::vector<std::vector<EntityBox>> entity_box_tracks(
    const std::vector<FrameSkeleton>& skeletons, const std::vector<EntityDef>& defs,
    double theta, double pad_frac, double img_w, double img_h) {
    std::vector<std::vector<EntityBox>> tracks(skeletons.size(),
                                               std::vector<EntityBox>(defs.size()));
    for (size_t t = 0; t < skeletons.size(); ++t) {
        for (size_t i = 0; i < defs.size(); ++i) {
            const EntityBox* prev = t > 0 ? &tracks[t - 1][i] : nullptr;
            tracks[t][i] =
                compute_entity_box(skeletons[t], defs[i], prev, theta, pad_frac, img_w, img_h);
        }
    }
    return tracks;
}

// ---------------------------------------------------------------------------
// OpenPose-style keypoint files. A frame is {"people": [{"pose_keypoints_2d":
// [x,y,c] * 25}]}; a video is either a JSON-lines file (one frame per line) or
// a directory of per-frame .json files ordered by zero-padded index.

namespace detail {

inline FrameSkeleton skeleton_from_frame_json(const nlohmann::json& frame, size_t frame_idx) {
    FrameSkeleton skel{};
    check<IoError>(frame.is_object() && frame.contains("people") && frame["people"].is_array(),
                   "keypoint frame ", frame_idx, ": expected object with 'people' array");
    const auto& people = frame["people"];
    if (people.empty()) return skel;  // absent person: all-zero confidence

    // multiple detections: keep the one with the highest total confidence
    size_t best = 0;
    double best_conf = -1.0;
    for (size_t p = 0; p < people.size(); ++p) {
        check<IoError>(people[p].contains("pose_keypoints_2d"), "keypoint frame ", frame_idx,
                       ": person ", p, " missing pose_keypoints_2d");
        const auto& arr = people[p]["pose_keypoints_2d"];
        check<IoError>(arr.is_array() && arr.size() == 3 * kNumKeypoints, "keypoint frame ",
                       frame_idx, ": expected ", 3 * kNumKeypoints, " values, got ", arr.size());
        double conf = 0;
        for (int j = 0; j < kNumKeypoints; ++j) conf += arr[3 * j + 2].get<double>();
        if (conf > best_conf) {
            best_conf = conf;
            best = p;
        }
    }
    const auto& arr = people[best]["pose_keypoints_2d"];
    for (int j = 0; j < kNumKeypoints; ++j) {
        skel.keypoints[j].x = arr[3 * j + 0].get<double>();
        skel.keypoints[j].y = arr[3 * j + 1].get<double>();
        skel.keypoints[j].c = arr[3 * j + 2].get<double>();
        check<IoError>(std::isfinite(skel.keypoints[j].x) && std::isfinite(skel.keypoints[j].y),
                       "keypoint frame ", frame_idx, ": non-finite coordinate at joint ", j);
        check<IoError>(skel.keypoints[j].c >= 0.0 && skel.keypoints[j].c <= 1.0,
                       "keypoint frame ", frame_idx, ": confidence out of [0,1] at joint ", j);
    }
    return skel;
}

}  // namespace detail

inline std::vector<FrameSkeleton> parse_keypoint_jsonl(std::istream& in) {
    std::vector<FrameSkeleton> frames;
    std::string line;
    size_t idx = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json frame;
        try {
            frame = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail<IoError>("keypoint frame ", idx, ": malformed JSON: ", e.what());
        }
        frames.push_back(detail::skeleton_from_frame_json(frame, idx));
        ++idx;
    }
    return frames;
}

inline std::vector<FrameSkeleton> load_keypoints(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    check<IoError>(fs::exists(path), "keypoint path does not exist: ", path.string());
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        std::vector<FrameSkeleton> frames;
        for (size_t i = 0; i < files.size(); ++i) {
            std::ifstream in(files[i]);
            check<IoError>(in.good(), "cannot open ", files[i].string());
            nlohmann::json frame;
            try {
                in >> frame;
            } catch (const nlohmann::json::exception& e) {
                fail<IoError>("keypoint frame ", i, " (", files[i].string(),
                              "): malformed JSON: ", e.what());
            }
            frames.push_back(detail::skeleton_from_frame_json(frame, i));
        }
        return frames;
    }
    std::ifstream in(path);
    check<IoError>(in.good(), "cannot open ", path.string());
    return parse_keypoint_jsonl(in);
}

inline void write_keypoint_jsonl(const std::vector<FrameSkeleton>& frames, std::ostream& out) {
    for (const auto& skel : frames) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& kp : skel.keypoints) {
            arr.push_back(kp.x);
            arr.push_back(kp.y);
            arr.push_back(kp.c);
        }
        nlohmann::json frame = {{"people", {{{"pose_keypoints_2d", arr}}}}};
        out << frame.dump() << "\n";
    }
}

}  // namespace mdn
