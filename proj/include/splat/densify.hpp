#pragma once

#include "splat/core.hpp"
#include "splat/raster.hpp"

#include <functional>
#include <memory>
#include <random>

namespace splat {

struct PatchSet {
    std::vector<std::vector<int32_t>> patches;  // indices into the scene
    int patch_size = 0;
};

// Per-parent attribute deltas for one split child.
struct ChildDelta {
    Vec3 d_position = Vec3::Zero();
    Vec4 d_rotation = Vec4::Zero();
    Vec2 d_scale = Vec2::Zero();
    double d_opacity = 0.0;
    std::array<double, 48> d_sh{};
};

// Maps a parent primitive (plus local patch context) to K children deltas.
class Densifier {
  public:
    virtual ~Densifier() = default;
    virtual std::vector<ChildDelta> split(const GaussianPrimitive2D& parent,
                                          const std::vector<int32_t>& patch,
                                          const GaussianScene& scene, int K) const = 0;
};

// Deterministic splitter: children offset +-0.5*scale along the tangent axes,
// scale halved, rotation/opacity/color copied.
class AnalyticDensifier : public Densifier {
  public:
    std::vector<ChildDelta> split(const GaussianPrimitive2D& parent,
                                  const std::vector<int32_t>& patch,
                                  const GaussianScene& scene, int K) const override;
};

// Densifier that always returns zero deltas (children == parents); used by
// tests that need a closed-form double-blend reference.
class ZeroDensifier : public Densifier {
  public:
    std::vector<ChildDelta> split(const GaussianPrimitive2D&, const std::vector<int32_t>&,
                                  const GaussianScene&, int K) const override {
        return std::vector<ChildDelta>(K);
    }
};

struct DensifyConfig {
    int K = 2;
    int patch_size = 2048;
    uint64_t seed = 0;
    const Densifier* densifier = nullptr;  // null -> analytic
};

struct BackprojectConfig {
    int stride = 1;
    double opacity = 0.9;
    double scale_factor = 1.0;  // splat extent = factor * stride * pixel footprint
};

// One primitive per valid (strided) pixel: unprojected position, camera-facing
// orientation, footprint-sized scale, DC color from the image.
GaussianScene backproject(const std::vector<ViewBundle>& views,
                          const BackprojectConfig& cfg = {});

// Median-ratio alignment of a relative depth map against a metric reference;
// returns the scale applied. With no reference, rescales to unit median.
double align_mono_depth(ImageD& mono, const ImageD* metric_ref, const ImageB* mask);

GaussianScene normalize_scene(const GaussianScene& s, SceneNormalization& params);
GaussianScene denormalize_scene(const GaussianScene& s, const SceneNormalization& params);

// Greedy KNN patches: random uncovered seed, its patch_size nearest uncovered
// neighbors form a patch, repeat until everything is covered.
PatchSet knn_partition(const GaussianScene& s, int patch_size, uint64_t seed);

// Applies the densifier to every parent in a patch; parents are kept, children
// are validated before being returned.
std::vector<GaussianPrimitive2D> self_split(const std::vector<int32_t>& patch,
                                            const GaussianScene& scene,
                                            const Densifier& densifier, int K);

// normalize -> partition -> split per patch -> merge -> denormalize.
// Output count is exactly P * (1 + K).
GaussianScene densify_scene(const GaussianScene& s, const DensifyConfig& cfg);

// Rigid pre-registration of approximately-posed RGB-D views. Every view is
// aligned to the reference by iterated projective point-to-plane alignment:
// a reference pixel is lifted to a world point through its depth, projected
// into the other view, lifted again through that view's depth, and the rigid
// correction minimizing the plane residual against the reference surface is
// solved per iteration (correspondences beyond 3x the median residual are
// dropped as occlusions). Pose components that depth cannot observe -- e.g.
// in-plane sliding on a planar scene or rotation about a sphere's center --
// get a zero update and are left for photometric refinement. Throws
// NoDepthError when a view lacks a depth map.
std::vector<CameraModel> register_views_by_depth(const std::vector<ViewBundle>& views,
                                                 int reference = 0, int iterations = 5,
                                                 int stride = 2);

// Photometric counterpart of register_views_by_depth: dense Gauss-Newton
// alignment of each view's pose against the reference image (Lucas-Kanade on
// the rigid pose, coarse-to-fine over a two-level pyramid), with geometry
// taken from the reference depth map. This observes exactly the components
// depth registration cannot -- e.g. in-plane sliding or rotation over a
// planar scene -- so the two are typically run in sequence: depth first,
// photometric for the leftover components, depth again to re-pin what the
// photometric pass disturbed. Rotations come out sharp; translations inherit
// a small systematic bias from rendering differences between views, so the
// camera centers should afterwards be refined against the scene (the
// optimizer's pose-translation group does this). Assumes mostly Lambertian
// appearance. Throws NoDepthError when the reference lacks depth.
std::vector<CameraModel> register_views_photometric(const std::vector<ViewBundle>& views,
                                                    int reference = 0, int iterations = 10,
                                                    int stride = 1);

// Removes the floor(fraction * P) lowest-contribution primitives plus any with
// opacity below the floor; survivor order is preserved.
GaussianScene prune_by_contribution(const GaussianScene& s,
                                    const std::vector<CameraModel>& cams, double fraction,
                                    double opacity_floor = 0.005,
                                    const RenderOptions& opts = {},
                                    std::vector<int32_t>* kept = nullptr);

}  // namespace splat
