#pragma once

#include "splat/raster.hpp"

#include <functional>

namespace splat {

// Gradients of a scalar loss w.r.t. every optimized quantity, plus the
// screen-space accumulators used for pruning diagnostics: abs_pos_grad sums
// per-pixel gradient norms, sum_pos_grad sums the raw vectors, so the former
// dominates the latter by the triangle inequality.
struct GradientBuffer {
    std::vector<Vec3> d_position;
    std::vector<Vec4> d_rotation;
    std::vector<Vec2> d_scale;  // w.r.t. linear scale
    std::vector<double> d_opacity;
    std::vector<std::array<double, 48>> d_sh;
    Vec3 d_cam_translation = Vec3::Zero();
    Vec4 d_cam_rotation = Vec4::Zero();
    std::vector<double> abs_pos_grad;
    std::vector<Vec2> sum_pos_grad;

    void resize(size_t n) {
        d_position.assign(n, Vec3::Zero());
        d_rotation.assign(n, Vec4::Zero());
        d_scale.assign(n, Vec2::Zero());
        d_opacity.assign(n, 0.0);
        d_sh.assign(n, {});
        abs_pos_grad.assign(n, 0.0);
        sum_pos_grad.assign(n, Vec2::Zero());
    }
    void add(const GradientBuffer& o);
};

// Gradients of the loss w.r.t. the rendered buffers. The optional per-record
// vectors are aligned with RenderOutput::blend_samples and let losses that
// see individual blend weights (depth distortion) inject gradients.
struct LossGrads {
    ImageD d_color;   // H x W x 3
    ImageD d_depth;   // H x W
    ImageD d_normal;  // H x W x 3
    ImageD d_alpha;   // H x W
    std::vector<double> d_blend_weight;
    std::vector<double> d_blend_depth;

    static LossGrads zeros(int h, int w) {
        LossGrads g;
        g.d_color = ImageD(h, w, 3);
        g.d_depth = ImageD(h, w, 1);
        g.d_normal = ImageD(h, w, 3);
        g.d_alpha = ImageD(h, w, 1);
        return g;
    }
    void add(const LossGrads& o);
};

GradientBuffer backward(const GaussianScene& scene, const CameraModel& cam,
                        const RenderOutput& rendered, const LossGrads& grads,
                        const RenderOptions& opts);

// Eq.-S1 style accumulation over per-pixel screen-space gradients.
std::pair<double, Vec2> abs_accumulate(const std::vector<Vec2>& per_pixel_grads);

// ---- finite-difference oracle ----------------------------------------------

struct FiniteDiffGroup {
    std::string name;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;  // |a - f| / max(|a|, |f|), worst violating scalar
    int checked = 0;
    int violations = 0;  // scalars failing both the abs and rel tolerance
};

struct FiniteDiffReport {
    std::vector<FiniteDiffGroup> groups;
    bool ok() const {
        for (const auto& g : groups)
            if (g.violations > 0) return false;
        return true;
    }
};

using LossFn = std::function<double(const RenderOutput&)>;
using LossGradFn = std::function<LossGrads(const RenderOutput&)>;

// Central differences on every scalar parameter (quaternions renormalized
// after perturbation) against the analytic backward pass.
FiniteDiffReport finite_diff_check(const GaussianScene& scene, const CameraModel& cam,
                                   const RenderOptions& opts, const LossFn& loss,
                                   const LossGradFn& loss_grad, double step,
                                   double abs_tol = 1e-7, double rel_tol = 1e-3);

}  // namespace splat
