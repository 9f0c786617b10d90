#pragma once

#include "splat/core.hpp"
#include "splat/grad.hpp"

#include <map>

namespace splat {

struct LossWeights {
    double w_l1 = 0.8;
    double w_ssim = 0.2;
    double w_rank = 0.1;
    double w_smooth = 0.1;
    double w_mvs = 0.05;
    double w_normal = 0.05;
    double w_dist = 100.0;
    double margin = 1e-4;  // depth-ranking hinge margin
    double n1 = 1e-2;      // mono-depth edge threshold
    double n2 = 1e-4;      // rendered-roughness allowance
    int patch_radius = 8;
    int sample_count = 4096;

    void validate() const;
};

// H x W x C feature map; C = 8 for the default extractor.
using FeatureMap = ImageD;

struct ScalarLoss {
    double value = 0.0;
    LossGrads grads;
    int64_t valid_count = 0;
};

// ---- individual terms -------------------------------------------------------

ScalarLoss loss_l1(const ImageD& rendered, const ImageD& target, const ImageB* mask);

// Single-scale SSIM, window 11, sigma 1.5, k1 = 0.01, k2 = 0.03, range 1.
// Returns 1 - mean SSIM with the gradient w.r.t. `rendered`.
ScalarLoss loss_ssim(const ImageD& rendered, const ImageD& target, const ImageB* mask);

// Mean SSIM plus optional gradient w.r.t. `a`; the single code path shared by
// the loss and the evaluation metric.
double ssim_mean(const ImageD& a, const ImageD& b, const ImageB* mask, ImageD* d_a);

// Ordinal depth supervision: hinge on pair orderings that contradict the
// reference map, sampled within patch_radius neighborhoods.
ScalarLoss loss_rank(const ImageD& d_render, const ImageD& d_mono, const ImageB& valid,
                     double margin, int samples, int patch_radius, uint64_t seed);

// Penalizes rendered-depth variation where the reference map is flat.
ScalarLoss loss_smooth(const ImageD& d_render, const ImageD& d_mono, const ImageB& valid,
                       double n1, double n2, int samples, int patch_radius, uint64_t seed);

// Default deterministic feature extractor: blurred RGB (3), Sobel gradients
// of the gray image (2), local gray means at three scales (3).
FeatureMap extract_features(const ImageD& image);

// Pluggable extractor hook; the default above is used when none is supplied.
using FeatureExtractor = std::function<FeatureMap(const ImageD&)>;

struct MvsReference {
    const FeatureMap* features;
    CameraModel camera;
};

// Warps each covered pixel into the reference views via the rendered depth
// and penalizes feature cosine dissimilarity; gradient flows through the
// rendered depth only.
ScalarLoss loss_mvs(const FeatureMap& current_features, const std::vector<MvsReference>& refs,
                    const ImageD& d_render, const ImageD& alpha, const CameraModel& cam,
                    double alpha_threshold = 0.5);

// Consistency between the blended normal buffer and the normal implied by
// finite differences of the rendered depth.
ScalarLoss loss_normal(const RenderOutput& rendered, const CameraModel& cam,
                       double alpha_threshold = 0.5);

// Per-ray pairwise blend-weight spread; requires blend records on the render.
ScalarLoss loss_distortion(const RenderOutput& rendered);

// ---- weighted total ---------------------------------------------------------

struct ViewLossContext {
    const RenderOutput* rendered = nullptr;
    const ViewBundle* view = nullptr;
    const FeatureMap* features = nullptr;  // of this view's input image
    std::vector<MvsReference> refs;
    uint64_t pair_seed = 0;
};

struct TotalLoss {
    double value = 0.0;
    std::map<std::string, double> terms;
    std::vector<LossGrads> per_view;
};

TotalLoss total_loss(const std::vector<ViewLossContext>& views, const LossWeights& w);

}  // namespace splat
