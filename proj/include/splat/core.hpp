#pragma once

#include "splat/common.hpp"

#include <array>
#include <optional>

namespace splat {

// One flattened 2D Gaussian splat living in 3D space.
// sh layout: channel-major, sh[ch * 16 + k] with k indexing the real
// SH basis up to degree 3.
struct GaussianPrimitive2D {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);  // unit quaternion (w,x,y,z)
    Vec2 scale = Vec2(1, 1);           // tangential extents, scene units
    double opacity = 1.0;
    std::array<double, 48> sh{};

    double& sh_at(int channel, int coeff) { return sh[channel * 16 + coeff]; }
    double sh_at(int channel, int coeff) const { return sh[channel * 16 + coeff]; }
};

// Pinhole camera with a differentiable rigid pose.
// The pose maps world to camera: p_cam = R(rotation) * p_world + translation.
struct CameraModel {
    double focal = 1.0;              // pixels
    Vec2 principal = Vec2(0, 0);     // pixels
    int width = 0;
    int height = 0;
    Vec3 translation = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);

    Vec3 center() const { return -quat_rotate(quat_conjugate(rotation), translation); }
    Vec3 world_to_cam(const Vec3& p) const { return quat_rotate(rotation, p) + translation; }
    Vec3 cam_to_world(const Vec3& p) const {
        return quat_rotate(quat_conjugate(rotation), p - translation);
    }
};

struct SceneNormalization {
    Vec3 centroid = Vec3::Zero();
    double scale = 1.0;
};

struct GaussianScene {
    std::vector<GaussianPrimitive2D> primitives;
    std::optional<SceneNormalization> normalization;
    // Bumped by every mutation; renders remember it so stale gradient
    // bookkeeping can be detected.
    uint64_t revision = 0;

    size_t size() const { return primitives.size(); }
    void bump() { ++revision; }
};

struct ViewBundle {
    ImageD image;                       // H x W x 3, [0,1]
    std::optional<ImageD> mono_depth;   // H x W, relative units
    CameraModel camera;
    std::optional<ImageB> mask;         // H x W, nonzero = valid

    bool pixel_valid(int y, int x) const {
        return !mask || mask->at(y, x) != 0;
    }
};

struct BlendSample {
    int32_t prim = 0;
    double alpha = 0.0;
    double weight = 0.0;  // alpha * transmittance
    double depth = 0.0;   // ray-splat intersection depth (camera z)
};

// Forward rasterization products. depth/normal are alpha-weighted means
// (normalized by the accumulated alpha where it is positive).
struct RenderOutput {
    ImageD color;   // H x W x 3
    ImageD depth;   // H x W
    ImageD normal;  // H x W x 3
    ImageD alpha;   // H x W

    // Per-primitive contribution tallies (filled when track_contrib is set):
    // summed blend weights and the number of pixels touched, per primitive.
    std::vector<double> contrib_weight;
    std::vector<int64_t> contrib_pixels;

    // Per-pixel blend records in CSR form (filled when record_blend is set).
    std::vector<int64_t> blend_offsets;  // size H*W+1
    std::vector<BlendSample> blend_samples;

    uint64_t scene_revision = 0;

    int width() const { return color.width; }
    int height() const { return color.height; }
};

// ---- scene-core operations --------------------------------------------------

// Renormalizes the quaternion and rejects non-finite or degenerate fields.
GaussianPrimitive2D validate_primitive(const GaussianPrimitive2D& p);

// Real SH basis, degree 0..3, 16 values, for a unit direction.
std::array<double, 16> sh_basis(const Vec3& dir);

// Per-channel derivative of the basis w.r.t. the (unnormalized) direction
// components; used by the gradient engine.
void sh_basis_with_grad(const Vec3& dir, std::array<double, 16>& basis,
                        std::array<Vec3, 16>& grad);

// Standard SH color evaluation: sum of coefficients times basis, plus a 0.5
// offset, clamped to [0,1] per channel.
Vec3 sh_to_rgb(const std::array<double, 48>& sh, const Vec3& view_dir);

struct TangentFrame {
    Vec3 t_u;  // scaled tangent, |t_u| = scale.x
    Vec3 t_v;  // scaled tangent, |t_v| = scale.y
    Vec3 n;    // unit normal
};

TangentFrame tangent_frame(const GaussianPrimitive2D& p);

double scene_extent(const GaussianScene& s);

}  // namespace splat
