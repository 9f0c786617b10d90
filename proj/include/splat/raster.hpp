#pragma once

#include "splat/core.hpp"

#include <optional>

namespace splat {

struct RenderOptions {
    double near = 0.01;
    bool track_contrib = false;
    bool record_blend = false;

    // Contribution cutoffs. A splat is skipped at a pixel when the squared
    // splat-space radius exceeds sigma2_cutoff or the resulting alpha falls
    // below alpha_cutoff. Applied identically by the tiled renderer and the
    // brute-force test oracle so they stay bit-comparable.
    double sigma2_cutoff = 9.0;
    double alpha_cutoff = 1.0 / 255.0;
    double alpha_clamp = 0.999;
    double term_threshold = 1e-4;  // stop blending once transmittance drops below

    int tile_size = 16;
    bool deterministic = true;  // kept for API symmetry; the reduction order
                                // is fixed either way
};

// A primitive after the world-to-camera transform, ready for per-pixel
// ray-splat intersection.
struct ScreenSplat {
    int32_t prim = 0;
    double mean_depth = 0.0;  // camera z at the splat center
    Vec3 center_cam = Vec3::Zero();
    Vec3 axis_u = Vec3::Zero();  // scaled tangent axes, camera frame
    Vec3 axis_v = Vec3::Zero();
    Vec3 unit_normal = Vec3::Zero();  // camera frame, flipped toward the camera
    double normal_flip = 1.0;
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();  // SH color for this view (per-splat view dir)
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // pixel bbox, half-open
};

struct RayHit {
    double s1 = 0.0, s2 = 0.0, t = 0.0;
    bool ok = false;
};

// Camera-space ray direction through pixel (x, y); z component is 1, so the
// intersection parameter t equals camera depth.
inline Vec3 pixel_ray(const CameraModel& cam, double x, double y) {
    return Vec3((x - cam.principal[0]) / cam.focal, (y - cam.principal[1]) / cam.focal, 1.0);
}

// Closed-form ray-splat-plane intersection in local splat coordinates.
RayHit ray_splat_intersect(const ScreenSplat& s, const Vec3& ray_dir, double near);

// Transforms the splat into camera space and precomputes the intersection
// data; absent when the center is behind the near plane or the conservative
// 3-sigma bbox misses the image. Throws DegenerateSplat when the splat plane
// contains the center ray within tolerance.
std::optional<ScreenSplat> project_primitive(const GaussianPrimitive2D& p, int prim_index,
                                             const CameraModel& cam, double near,
                                             double sigma_cutoff = 3.0);

// Gaussian falloff alpha at a pixel, clamped to [0, 0.999].
double splat_alpha(const ScreenSplat& s, const GaussianPrimitive2D& p, const Vec2& pixel,
                   const CameraModel& cam);

// Projection plus depth-sorted tile binning; shared by the forward render and
// the gradient engine so both replay identical blending.
struct PreparedFrame {
    std::vector<ScreenSplat> splats;
    CameraModel cam;
    RenderOptions opts;
    uint64_t scene_revision = 0;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int32_t>> tile_lists;  // indices into splats
};

PreparedFrame prepare_frame(const GaussianScene& scene, const CameraModel& cam,
                            const RenderOptions& opts);

RenderOutput render_prepared(const PreparedFrame& frame, size_t primitive_count);

RenderOutput render(const GaussianScene& scene, const CameraModel& cam,
                    const RenderOptions& opts = {});

// Eq.-style multi-view contribution: per view, the mean blend weight over the
// pixels each primitive touches, summed across views.
std::vector<double> accumulate_contributions(const GaussianScene& scene,
                                             const std::vector<CameraModel>& cams,
                                             const RenderOptions& opts = {});

}  // namespace splat
