#pragma once

#include "splat/grad.hpp"
#include "splat/losses.hpp"

namespace splat {

struct OptimRates {
    // Position and pose-translation rates are multiplied by the scene extent.
    double position = 1.6e-4;
    double rotation = 1e-3;
    double scale = 5e-3;  // applied in log-space
    double opacity = 5e-2;
    double sh = 2.5e-3;
    double pose_translation = 1e-4;
    double pose_rotation = 1e-4;
};

struct OptimConfig {
    int iterations = 1000;
    OptimRates rates;
    int prune_interval = 500;
    double prune_fraction = 0.05;
    int downsample_initial = 2;
    int downsample_switch_iter = 500;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;
    bool optimize_poses = true;
    // Iterations at the start during which only the poses move (scene rates
    // scaled to zero). With a depth-initialized scene the geometry is an
    // internally consistent rigid shell, so letting the views register to it
    // first keeps the splats from absorbing pose error.
    int pose_warmup_iters = 0;
    // Iterations during which SH bands >= 1 receive no updates. Degree-3
    // view-dependent color can absorb camera-pose error almost to first
    // order, so keeping early color view-independent stabilizes poses.
    int sh_freeze_iters = 0;
    LossWeights loss;
    RenderOptions render;

    void validate() const;
};

// First/second Adam moments for every parameter group.
struct AdamState {
    std::vector<Vec3> m_pos, v_pos;
    std::vector<Vec4> m_rot, v_rot;
    std::vector<Vec2> m_scale, v_scale;
    std::vector<double> m_op, v_op;
    std::vector<std::array<double, 48>> m_sh, v_sh;
    std::vector<Vec3> m_cam_t, v_cam_t;  // per view
    std::vector<Vec4> m_cam_r, v_cam_r;
    int64_t step = 0;

    void resize(size_t prims, size_t views);
};

// One bias-corrected Adam update over the scene and camera poses. Scales are
// stepped in log-space; quaternions are renormalized afterwards. lr_scale is
// the per-iteration schedule factor (1 = nominal rates); scene_lr_scale,
// when non-negative, overrides it for the scene parameter groups only.
void adam_step(GaussianScene& scene, std::vector<CameraModel>& cams,
               const GradientBuffer& scene_grads,
               const std::vector<Vec3>& cam_t_grads, const std::vector<Vec4>& cam_r_grads,
               AdamState& state, const OptimConfig& cfg, double scene_extent_hint,
               double lr_scale = 1.0, double scene_lr_scale = -1.0);

struct IterationRecord {
    int iteration = 0;
    double total = 0.0;
    std::map<std::string, double> terms;
    size_t primitive_count = 0;
};

struct OptimReport {
    std::vector<IterationRecord> iterations;
    std::vector<size_t> counts_after_prune;
    double wall_clock_seconds = 0.0;
    bool diverged = false;
};

struct OptimResult {
    GaussianScene scene;
    std::vector<CameraModel> cameras;
    OptimReport report;
};

// Joint optimization of primitives and per-view poses: render (pose-at-origin)
// -> total loss -> analytic backward -> Adam, with contribution pruning at
// iteration 0 and every prune_interval, and low-resolution rendering until
// downsample_switch_iter. Deterministic for a fixed seed.
OptimResult optimize(const GaussianScene& scene, const std::vector<ViewBundle>& views,
                     const OptimConfig& cfg);

// Streams the scene through the inverse camera pose so it can be rendered by
// an identity camera at the origin; the stored scene is never mutated.
GaussianScene pose_apply_inverse(const GaussianScene& scene, const CameraModel& cam);

// The identity-pose camera paired with pose_apply_inverse.
CameraModel camera_at_origin(const CameraModel& cam);

}  // namespace splat
