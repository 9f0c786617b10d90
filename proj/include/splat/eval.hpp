#pragma once

#include "splat/core.hpp"

#include <optional>

namespace splat {

// Similarity transform p -> scale * R * p + t.
struct SimTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// Symmetric Chamfer distance: mean nearest-neighbor Euclidean distance in
// both directions, averaged. Backed by a kd-tree; value-identical to the
// brute-force definition.
double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Least-squares similarity alignment (Umeyama) mapping src onto dst.
// Throws DegenerateConfigurationError for fewer than three points or a
// collinear configuration.
SimTransform umeyama_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                           bool with_scale = true);

struct AteResult {
    double translation_rmse = 0.0;  // scene units, after alignment
    double rotation_rmse_deg = 0.0;
    SimTransform alignment;
};

// Absolute trajectory error between estimated and ground-truth camera poses.
// When `alignment` is absent the estimated centers are Umeyama-aligned onto
// the ground truth first; passing a transform (e.g. identity) skips that.
AteResult ate_rmse(const std::vector<CameraModel>& estimated,
                   const std::vector<CameraModel>& ground_truth,
                   const std::optional<SimTransform>& alignment = std::nullopt);

// Peak signal-to-noise ratio over [0,1] images; +infinity for identical
// inputs. Shares the masked-MSE accounting with the photometric losses.
double psnr(const ImageD& a, const ImageD& b, const ImageB* mask = nullptr);

// Mean SSIM (the evaluation-facing alias of the loss-module implementation).
double ssim(const ImageD& a, const ImageD& b, const ImageB* mask = nullptr);

// Backprojects covered pixels (alpha above the threshold) of each rendered
// depth map to world space and voxel-downsamples the union deterministically.
struct DepthFuseInput {
    const ImageD* depth;
    const ImageD* alpha;
    CameraModel camera;
};

std::vector<Vec3> fuse_depth(const std::vector<DepthFuseInput>& views, double voxel_size,
                             double alpha_threshold = 0.5);

// Convenience form: renders depth from the scene for each camera first.
std::vector<Vec3> fuse_depth(const GaussianScene& scene, const std::vector<CameraModel>& cams,
                             double voxel_size, double alpha_threshold = 0.5);

// Re-expresses a camera so it produces the same image of the transformed
// world `p' = T(p)`; rendered depths pick up the factor T.scale.
CameraModel transform_camera(const CameraModel& cam, const SimTransform& t);

}  // namespace splat
