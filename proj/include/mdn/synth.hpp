#pragma once

// Procedural micro-action generator: stick figures on a textured canvas with
// exact BODY-25 keypoints and two-level labels. Position-defined classes hold
// a displaced configuration; motion-defined classes oscillate around the same
// mean configuration, so the pair is separable only through temporal pattern.

#include <filesystem>
#include <fstream>

#include "mdn/image_io.hpp"
#include "mdn/pose.hpp"

namespace mdn {

enum class ActionKind { kPosition, kMotion };

inline const char* action_kind_name(ActionKind k) {
    return k == ActionKind::kPosition ? "position" : "motion";
}

struct JointMove {
    int joint;       // BODY-25 index
    double dx, dy;   // target displacement, canvas fractions
    double osc_w;    // oscillation participation (motion classes)
};

struct ActionSpec {
    int action_id = 0;
    int body_level_id = 0;
    ActionKind kind = ActionKind::kPosition;
    std::string name;
    std::vector<JointMove> moves;
    std::array<double, 2> osc_axis = {1.0, 0.0};
    double amplitude = 0.0;  // canvas fraction; position classes use it as the
                             // per-sample static offset range
    double frequency = 0.0;  // cycles per frame; 0 for position classes
    int duration = 12;
};

// Base standing pose in canvas fractions (x right, y down), BODY-25 order.
inline const std::array<std::array<double, 2>, kNumKeypoints>& base_pose() {
    static const std::array<std::array<double, 2>, kNumKeypoints> pose = {{
        {0.50, 0.18},  // 0 nose
        {0.50, 0.30},  // 1 neck
        {0.38, 0.30},  // 2 r shoulder
        {0.34, 0.44},  // 3 r elbow
        {0.32, 0.57},  // 4 r wrist
        {0.62, 0.30},  // 5 l shoulder
        {0.66, 0.44},  // 6 l elbow
        {0.68, 0.57},  // 7 l wrist
        {0.50, 0.55},  // 8 mid hip
        {0.44, 0.55},  // 9 r hip
        {0.43, 0.72},  // 10 r knee
        {0.42, 0.88},  // 11 r ankle
        {0.56, 0.55},  // 12 l hip
        {0.57, 0.72},  // 13 l knee
        {0.58, 0.88},  // 14 l ankle
        {0.46, 0.15},  // 15 r eye
        {0.54, 0.15},  // 16 l eye
        {0.43, 0.17},  // 17 r ear
        {0.57, 0.17},  // 18 l ear
        {0.60, 0.93},  // 19 l big toe
        {0.63, 0.93},  // 20 l small toe
        {0.56, 0.91},  // 21 l heel
        {0.40, 0.93},  // 22 r big toe
        {0.37, 0.93},  // 23 r small toe
        {0.44, 0.91},  // 24 r heel
    }};
    return pose;
}

// BODY-25 limb topology (segment endpoints); every joint appears at least once.
inline const std::vector<std::pair<int, int>>& limb_pairs() {
    static const std::vector<std::pair<int, int>> pairs = {
        {1, 8},  {1, 2},   {1, 5},   {2, 3},   {3, 4},   {5, 6},   {6, 7},   {8, 9},
        {9, 10}, {10, 11}, {8, 12},  {12, 13}, {13, 14}, {1, 0},   {0, 15},  {15, 17},
        {0, 16}, {16, 18}, {14, 19}, {19, 20}, {14, 21}, {11, 22}, {22, 23}, {11, 24}};
    return pairs;
}

// Eight classes in four body-level families. Within families 0, 2 and 3 the
// motion class oscillates around the position class's held configuration, so
// the mean poses coincide and only the dynamics differ.
inline std::vector<ActionSpec> builtin_specs(int duration = 12) {
    check<ConfigError>(duration >= 8, "builtin_specs: duration must be >= 8, got ", duration);
    std::vector<ActionSpec> specs;
    auto add = [&](int id, int body, ActionKind kind, std::string name,
                   std::vector<JointMove> moves, std::array<double, 2> axis, double amp,
                   double freq) {
        ActionSpec s;
        s.action_id = id;
        s.body_level_id = body;
        s.kind = kind;
        s.name = std::move(name);
        s.moves = std::move(moves);
        s.osc_axis = axis;
        s.amplitude = amp;
        s.frequency = freq;
        s.duration = duration;
        specs.push_back(std::move(s));
    };
    // family 0: right hand raised to the face
    std::vector<JointMove> hand_face = {{4, 0.14, -0.37, 1.0}, {3, 0.10, -0.22, 0.5}};
    add(0, 0, ActionKind::kPosition, "hand_at_face", hand_face, {1.0, 0.0}, 0.08, 0.0);
    add(1, 0, ActionKind::kMotion, "arm_wave", hand_face, {1.0, 0.0}, 0.08, 0.25);
    // family 1: head
    add(2, 1, ActionKind::kPosition, "hand_at_head",
        {{4, 0.18, -0.47, 1.0}, {3, 0.12, -0.28, 0.5}}, {1.0, 0.0}, 0.05, 0.0);
    add(3, 1, ActionKind::kMotion, "head_shake",
        {{0, 0, 0, 1.0}, {15, 0, 0, 1.0}, {16, 0, 0, 1.0}, {17, 0, 0, 1.0}, {18, 0, 0, 1.0}},
        {1.0, 0.0}, 0.05, 1.0 / 3.0);
    // family 2: arms crossed over the torso
    std::vector<JointMove> crossed = {{4, 0.26, -0.12, 1.0},
                                      {7, -0.26, -0.12, 1.0},
                                      {3, 0.13, -0.06, 0.4},
                                      {6, -0.13, -0.06, 0.4}};
    add(4, 2, ActionKind::kPosition, "arms_crossed", crossed, {0.707, 0.707}, 0.035, 0.0);
    add(5, 2, ActionKind::kMotion, "finger_tap", crossed, {0.707, 0.707}, 0.035, 0.5);
    // family 3: right leg forward
    std::vector<JointMove> foot = {{11, 0.12, -0.02, 1.0},
                                   {22, 0.12, -0.02, 1.0},
                                   {23, 0.12, -0.02, 1.0},
                                   {24, 0.12, -0.02, 1.0},
                                   {10, 0.06, -0.01, 0.5}};
    add(6, 3, ActionKind::kPosition, "foot_forward", foot, {1.0, 0.0}, 0.07, 0.0);
    add(7, 3, ActionKind::kMotion, "leg_oscillation", foot, {1.0, 0.0}, 0.07, 0.25);
    return specs;
}

struct SampleParams {
    double scale = 1.0;
    double tx = 0.0, ty = 0.0;
    double static_offset = 0.0;  // position classes: offset in [-1,1] of amplitude
    double phase = 0.0;          // motion classes
};

inline SampleParams draw_sample_params(const ActionSpec& spec, Rng& rng) {
    SampleParams p;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    p.scale = 1.0 + 0.06 * u(rng);
    p.tx = 0.03 * u(rng);
    p.ty = 0.03 * u(rng);
    p.static_offset = u(rng);
    p.phase = u01(rng);
    return p;
}

inline int settle_frames(const ActionSpec& spec) {
    return (spec.duration + 3) / 4;  // 25% settle-in
}

// Joint positions (canvas pixels) at frame t.
inline std::array<std::array<double, 2>, kNumKeypoints> pose_at(const ActionSpec& spec,
                                                                const SampleParams& params,
                                                                int t, int canvas) {
    const int settle = settle_frames(spec);
    const double ramp = settle > 0 ? std::min(1.0, static_cast<double>(t) / settle) : 1.0;
    auto pose = base_pose();
    // rigid per-sample jitter around the canvas center
    for (auto& pt : pose) {
        pt[0] = 0.5 + (pt[0] - 0.5) * params.scale + params.tx;
        pt[1] = 0.5 + (pt[1] - 0.5) * params.scale + params.ty;
    }
    double osc = 0.0;
    if (spec.kind == ActionKind::kMotion)
        osc = spec.amplitude *
              std::sin(2.0 * M_PI * (spec.frequency * static_cast<double>(t) + params.phase));
    for (const auto& mv : spec.moves) {
        double dx = mv.dx, dy = mv.dy;
        if (spec.kind == ActionKind::kPosition) {
            dx += params.static_offset * spec.amplitude * spec.osc_axis[0] * mv.osc_w;
            dy += params.static_offset * spec.amplitude * spec.osc_axis[1] * mv.osc_w;
        } else {
            dx += osc * spec.osc_axis[0] * mv.osc_w;
            dy += osc * spec.osc_axis[1] * mv.osc_w;
        }
        pose[mv.joint][0] += ramp * dx;
        pose[mv.joint][1] += ramp * dy;
    }
    const double margin = 1.5;
    for (auto& pt : pose) {
        pt[0] = std::clamp(pt[0] * canvas, margin, canvas - margin);
        pt[1] = std::clamp(pt[1] * canvas, margin, canvas - margin);
    }
    return pose;
}

// ---------------------------------------------------------------------------
// Rasterization: anti-aliased segments plus a filled head disc over seeded
// background noise.

namespace detail {

inline double segment_distance(double px, double py, double ax, double ay, double bx,
                               double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

// One frame, planar 3xHxW. The background texture comes from bg_seed so a
// fixed pose renders to identical pixels.
inline std::vector<uint8_t> render_frame(
    const std::array<std::array<double, 2>, kNumKeypoints>& pose, int canvas,
    uint64_t bg_seed) {
    const int h = canvas, w = canvas;
    std::vector<double> lum(h * w);
    Rng bg(bg_seed);
    std::uniform_real_distribution<double> noise(20.0, 64.0);
    for (auto& v : lum) v = noise(bg);

    const double half_width = 1.0;
    auto splat = [&](double coverage, int x, int y) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        const double ink = 150.0 + 80.0 * coverage;
        lum[y * w + x] = std::max(lum[y * w + x], coverage * ink + (1.0 - coverage) * lum[y * w + x]);
    };
    auto draw_segment = [&](double ax, double ay, double bx, double by) {
        const int x0 = static_cast<int>(std::floor(std::min(ax, bx) - 2));
        const int x1 = static_cast<int>(std::ceil(std::max(ax, bx) + 2));
        const int y0 = static_cast<int>(std::floor(std::min(ay, by) - 2));
        const int y1 = static_cast<int>(std::ceil(std::max(ay, by) + 2));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d = detail::segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
                const double cov = std::clamp(half_width + 0.75 - d, 0.0, 1.0);
                if (cov > 0) splat(cov, x, y);
            }
    };
    for (const auto& [a, b] : limb_pairs())
        draw_segment(pose[a][0], pose[a][1], pose[b][0], pose[b][1]);
    // head disc centered between the ears, above the nose
    const double cx = 0.5 * (pose[17][0] + pose[18][0]);
    const double cy = 0.5 * (pose[17][1] + pose[18][1]) - 0.01 * canvas;
    const double radius = 0.055 * canvas;
    for (int y = static_cast<int>(cy - radius - 2); y <= static_cast<int>(cy + radius + 2); ++y)
        for (int x = static_cast<int>(cx - radius - 2); x <= static_cast<int>(cx + radius + 2);
             ++x) {
            const double d =
                std::sqrt((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy));
            const double cov = std::clamp(radius + 0.5 - d, 0.0, 1.0);
            if (cov > 0) splat(cov, x, y);
        }

    std::vector<uint8_t> rgb(3 * h * w);
    for (int i = 0; i < h * w; ++i) {
        const double v = std::clamp(lum[i], 0.0, 255.0);
        rgb[0 * h * w + i] = static_cast<uint8_t>(v);
        rgb[1 * h * w + i] = static_cast<uint8_t>(std::clamp(v * 0.97, 0.0, 255.0));
        rgb[2 * h * w + i] = static_cast<uint8_t>(std::clamp(v * 0.92, 0.0, 255.0));
    }
    return rgb;
}

struct SynthConfig {
    int canvas = 96;
    int duration = 12;
    double noise = 0.1;  // confidence noise; dropouts at rate noise/2
    uint64_t seed = 7;
    int n_per_class = 40;
    bool png = false;  // raw MDNVID1 by default
};

struct SynthSample {
    std::string id;
    VideoU8 video;
    std::vector<FrameSkeleton> skeleton;
    int body_label = 0;
    int action_label = 0;
};

inline SynthSample make_sample(const ActionSpec& spec, const SynthConfig& cfg,
                               uint64_t sample_seed, const std::string& id) {
    Rng rng(sample_seed);
    const auto params = draw_sample_params(spec, rng);
    const uint64_t bg_seed = derive_seed(sample_seed, 99);

    SynthSample sample;
    sample.id = id;
    sample.action_label = spec.action_id;
    sample.body_label = spec.body_level_id;
    sample.video.shape = {spec.duration, 3, cfg.canvas, cfg.canvas};
    sample.video.data.resize(numel_of(sample.video.shape));

    std::normal_distribution<double> conf_noise(0.0, cfg.noise > 0 ? cfg.noise : 1e-12);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int t = 0; t < spec.duration; ++t) {
        const auto pose = pose_at(spec, params, t, cfg.canvas);
        auto rgb = render_frame(pose, cfg.canvas, bg_seed);
        std::copy(rgb.begin(), rgb.end(),
                  sample.video.data.begin() + static_cast<int64_t>(t) * rgb.size());
        FrameSkeleton skel{};
        for (int j = 0; j < kNumKeypoints; ++j) {
            skel.keypoints[j].x = pose[j][0];
            skel.keypoints[j].y = pose[j][1];
            double c = 1.0;
            if (cfg.noise > 0) {
                c = std::clamp(1.0 - std::abs(conf_noise(rng)), 0.0, 1.0);
                if (u01(rng) < cfg.noise / 2.0) c = 0.0;  // simulated detector dropout
            }
            skel.keypoints[j].c = c;
        }
        sample.skeleton.push_back(skel);
    }
    return sample;
}

// Writes frames/, keypoints/ and manifest.csv (sample_id, split, body_label,
// action_label) with exact per-class 70/15/15 stratification, plus classes.csv
// describing the label space.
inline void gen_dataset(const std::filesystem::path& out_dir,
                        const std::vector<ActionSpec>& specs, const SynthConfig& cfg) {
    namespace fs = std::filesystem;
    check<ConfigError>(!specs.empty(), "gen_dataset: no action specs");
    check<ConfigError>(cfg.n_per_class > 0, "gen_dataset: n_per_class must be positive, got ",
                       cfg.n_per_class);
    fs::create_directories(out_dir / "frames");
    fs::create_directories(out_dir / "keypoints");

    const int n = cfg.n_per_class;
    const int n_train = static_cast<int>(0.7 * n);
    const int n_val = static_cast<int>(0.15 * n);

    std::ofstream manifest(out_dir / "manifest.csv");
    check<IoError>(manifest.good(), "cannot write manifest in ", out_dir.string());
    manifest << "sample_id,split,body_label,action_label\n";
    std::ofstream classes(out_dir / "classes.csv");
    classes << "action_label,name,kind,body_label\n";
    for (const auto& spec : specs)
        classes << spec.action_id << "," << spec.name << "," << action_kind_name(spec.kind)
                << "," << spec.body_level_id << "\n";

    for (size_t ci = 0; ci < specs.size(); ++ci) {
        // split assignment: a seeded shuffle of within-class indices
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng split_rng(derive_seed(cfg.seed, 1000 + ci));
        std::shuffle(order.begin(), order.end(), split_rng);
        std::vector<std::string> split_of(n);
        for (int r = 0; r < n; ++r)
            split_of[order[r]] = r < n_train ? "train" : (r < n_train + n_val ? "val" : "test");

        for (int j = 0; j < n; ++j) {
            const uint64_t global = ci * static_cast<uint64_t>(n) + j;
            char idbuf[16];
            std::snprintf(idbuf, sizeof(idbuf), "s%05llu",
                          static_cast<unsigned long long>(global));
            auto sample = make_sample(specs[ci], cfg, derive_seed(cfg.seed, global), idbuf);
            if (cfg.png) {
#ifdef MDN_HAVE_PNG
                const auto dir = out_dir / "frames" / sample.id;
                fs::create_directories(dir);
                const int hw = cfg.canvas * cfg.canvas;
                std::vector<uint8_t> interleaved(hw * 3);
                for (int t = 0; t < specs[ci].duration; ++t) {
                    const uint8_t* planar = sample.video.data.data() +
                                            static_cast<int64_t>(t) * 3 * hw;
                    for (int i = 0; i < hw; ++i)
                        for (int c = 0; c < 3; ++c)
                            interleaved[i * 3 + c] = planar[c * hw + i];
                    char fname[16];
                    std::snprintf(fname, sizeof(fname), "f%03d.png", t);
                    write_png_rgb(dir / fname, cfg.canvas, cfg.canvas, interleaved.data());
                }
#else
                fail<ConfigError>("PNG output requested but PNG support is not built");
#endif
            } else {
                write_mdnvid(sample.video, out_dir / "frames" / (sample.id + ".mdnvid"));
            }
            std::ofstream kp(out_dir / "keypoints" / (sample.id + ".jsonl"));
            write_keypoint_jsonl(sample.skeleton, kp);
            manifest << sample.id << "," << split_of[j] << "," << sample.body_label << ","
                     << sample.action_label << "\n";
        }
    }
}

}  // namespace mdn
