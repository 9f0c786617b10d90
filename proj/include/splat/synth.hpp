#pragma once

#include "splat/core.hpp"

#include <string>

namespace splat {

enum class SynthShape { plane, box_room, sphere, corner };

SynthShape shape_from_string(const std::string& name);
std::string shape_to_string(SynthShape s);

struct SynthNoise {
    double pose_rot_deg = 0.0;     // per-view random rotation of the pose
    double pose_trans_frac = 0.0;  // camera-center shift, fraction of extent
    double depth_scale = 1.0;      // multiplicative bias on the depth maps
    double depth_jitter = 0.0;     // uniform per-pixel noise amplitude
};

struct SynthSpec {
    SynthShape shape = SynthShape::plane;
    int grid = 24;        // surface tessellation density
    int image_size = 128;
    int n_views = 3;
    SynthNoise noise;
    uint64_t seed = 0;
};

struct SynthResult {
    GaussianScene gt_scene;
    // Input views carry the (possibly perturbed) cameras plus rendered RGB,
    // depth, and coverage mask from the ground-truth poses.
    std::vector<ViewBundle> views;
    std::vector<CameraModel> gt_cameras;  // true poses, index-aligned with views
    ViewBundle held_out;                  // clean novel view for evaluation
};

// Deterministic procedural fixture: textured splats on a known surface,
// n_views cameras on a sparse arc plus one held-out camera.
SynthResult synth_scene(const SynthSpec& spec);

// World-to-camera pose looking from `eye` toward `target`.
CameraModel look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                    int width, int height);

}  // namespace splat
