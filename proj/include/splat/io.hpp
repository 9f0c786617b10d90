#pragma once

#include "splat/core.hpp"
#include "splat/densify.hpp"
#include "splat/losses.hpp"
#include "splat/optim.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace splat {

// ---- raster images (PPM / PGM, binary, 8- or 16-bit) -------------------------

ImageD read_ppm(const std::filesystem::path& path);   // H x W x 3, [0,1]
void write_ppm(const std::filesystem::path& path, const ImageD& image, int bits = 8);

ImageD read_pgm(const std::filesystem::path& path);   // H x W x 1, [0,1]
void write_pgm(const std::filesystem::path& path, const ImageD& image, int bits = 8);

// ---- portable float map (grayscale Pf) ---------------------------------------

ImageD read_pfm(const std::filesystem::path& path);   // H x W x 1, raw floats
void write_pfm(const std::filesystem::path& path, const ImageD& image);

// ---- binary scene file --------------------------------------------------------

// Little-endian container: magic "SPL2", u32 version (1), u64 primitive
// count, then per primitive 58 float64 fields: position (3), quaternion
// w,x,y,z (4), scale (2), opacity (1), sh channel-major (48).
void write_scene(const std::filesystem::path& path, const GaussianScene& scene);
GaussianScene read_scene(const std::filesystem::path& path);

// ---- job configuration --------------------------------------------------------

struct ViewSpec {
    std::string image;
    std::string depth;  // optional, empty = none
    std::string mask;   // optional, empty = none
    CameraModel camera;
};

struct JobConfig {
    std::vector<ViewSpec> views;
    OptimConfig optim;
    LossWeights loss;
    DensifyConfig densify;
    BackprojectConfig backproject;
    double prune_fraction = 0.05;
    std::string out_dir;
    uint64_t seed = 0;
};

// Parses the JSON job file and checks that every referenced file exists and
// that each view's buffers agree with the camera resolution.
JobConfig read_job_config(const std::filesystem::path& path);

// Loads the image/depth/mask buffers referenced by a view spec.
ViewBundle load_view(const ViewSpec& spec, const std::filesystem::path& base_dir);

// JSON round trip for cameras; used by the job config and the CLI's
// auxiliary pose files.
CameraModel camera_from_json(const nlohmann::json& j);
nlohmann::json camera_to_json(const CameraModel& cam);

// ---- metrics report ------------------------------------------------------------

// Line-delimited "key value" records with stable ordering and fixed float
// formatting, suitable for golden-file comparison.
void write_report(const std::filesystem::path& path,
                  const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> read_report(const std::filesystem::path& path);
std::string format_metric(double value);

}  // namespace splat
