#include "splat/eval.hpp"

#include "splat/losses.hpp"
#include "splat/raster.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace splat {

namespace {

// Minimal median-split kd-tree over points; query returns the exact squared
// nearest-neighbor distance, so results match a brute-force scan.
class KdTree {
public:
    explicit KdTree(const std::vector<Vec3>& pts) : pts_(pts) {
        idx_.resize(pts.size());
        std::iota(idx_.begin(), idx_.end(), 0);
        nodes_.reserve(2 * pts.size());
        root_ = build(0, static_cast<int>(pts.size()), 0);
    }

    double nearest_sq(const Vec3& q) const {
        double best = std::numeric_limits<double>::infinity();
        search(root_, q, best);
        return best;
    }

private:
    struct Node {
        int point = -1;
        int axis = 0;
        int left = -1, right = -1;
    };

    int build(int lo, int hi, int depth) {
        if (lo >= hi) return -1;
        const int axis = depth % 3;
        const int mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                         [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
        Node n;
        n.point = idx_[mid];
        n.axis = axis;
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(n);
        nodes_[self].left = build(lo, mid, depth + 1);
        nodes_[self].right = build(mid + 1, hi, depth + 1);
        return self;
    }

    void search(int node, const Vec3& q, double& best) const {
        if (node < 0) return;
        const Node& n = nodes_[node];
        best = std::min(best, (pts_[n.point] - q).squaredNorm());
        const double delta = q[n.axis] - pts_[n.point][n.axis];
        const int near = delta < 0.0 ? n.left : n.right;
        const int far = delta < 0.0 ? n.right : n.left;
        search(near, q, best);
        if (delta * delta < best) search(far, q, best);
    }

    const std::vector<Vec3>& pts_;
    std::vector<int> idx_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

double directed_mean_nn(const std::vector<Vec3>& from, const KdTree& tree) {
    double sum = 0.0;
    for (const auto& p : from) sum += std::sqrt(tree.nearest_sq(p));
    return sum / from.size();
}

}  // namespace

double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.empty() || b.empty()) throw EmptyCloudError("chamfer_distance: empty point cloud");
    KdTree ta(a), tb(b);
    return 0.5 * (directed_mean_nn(a, tb) + directed_mean_nn(b, ta));
}

SimTransform umeyama_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                           bool with_scale) {
    if (src.size() != dst.size())
        throw ShapeMismatchError("umeyama_align: point counts differ");
    const size_t n = src.size();
    if (n < 3) throw DegenerateConfigurationError("umeyama_align: need at least 3 points");

    Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
        mu_s += src[i];
        mu_d += dst[i];
    }
    mu_s /= static_cast<double>(n);
    mu_d /= static_cast<double>(n);

    Mat3 cov = Mat3::Zero();
    double var_s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Vec3 ps = src[i] - mu_s, pd = dst[i] - mu_d;
        cov += pd * ps.transpose();
        var_s += ps.squaredNorm();
    }
    cov /= static_cast<double>(n);
    var_s /= static_cast<double>(n);

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0])
        throw DegenerateConfigurationError("umeyama_align: collinear or degenerate points");

    Vec3 d_diag = Vec3::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d_diag[2] = -1.0;

    SimTransform t;
    t.rotation = svd.matrixU() * d_diag.asDiagonal() * svd.matrixV().transpose();
    t.scale = with_scale ? (sv[0] * d_diag[0] + sv[1] * d_diag[1] + sv[2] * d_diag[2]) / var_s
                         : 1.0;
    t.translation = mu_d - t.scale * (t.rotation * mu_s);
    return t;
}

AteResult ate_rmse(const std::vector<CameraModel>& estimated,
                   const std::vector<CameraModel>& ground_truth,
                   const std::optional<SimTransform>& alignment) {
    if (estimated.size() != ground_truth.size() || estimated.empty())
        throw ShapeMismatchError("ate_rmse: trajectory sizes differ or are empty");

    std::vector<Vec3> c_est, c_gt;
    for (const auto& c : estimated) c_est.push_back(c.center());
    for (const auto& c : ground_truth) c_gt.push_back(c.center());

    AteResult r;
    r.alignment = alignment ? *alignment : umeyama_align(c_est, c_gt, true);

    double t_sq = 0.0, r_sq = 0.0;
    const Eigen::Quaterniond q_align(r.alignment.rotation);
    const Vec4 qa(q_align.w(), q_align.x(), q_align.y(), q_align.z());
    for (size_t i = 0; i < estimated.size(); ++i) {
        t_sq += (r.alignment.apply(c_est[i]) - c_gt[i]).squaredNorm();
        // World rotation of the camera is R(q)^T; alignment rotates world
        // space, so the aligned camera orientation is q_cam * conj(q_align).
        const Vec4 q_aligned = quat_mul(estimated[i].rotation, quat_conjugate(qa));
        const double ang = quat_angle(quat_normalized(q_aligned),
                                      quat_normalized(ground_truth[i].rotation));
        r_sq += ang * ang;
    }
    r.translation_rmse = std::sqrt(t_sq / estimated.size());
    r.rotation_rmse_deg = std::sqrt(r_sq / estimated.size()) * 180.0 / M_PI;
    return r;
}

double psnr(const ImageD& a, const ImageD& b, const ImageB* mask) {
    if (!a.same_shape(b)) throw ShapeMismatchError("psnr: shape mismatch");
    double sq = 0.0;
    int64_t n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (mask && mask->at(y, x) == 0) continue;
            for (int c = 0; c < a.channels; ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                sq += d * d;
                ++n;
            }
        }
    if (n == 0) throw EmptyMaskError("psnr: no valid pixels");
    const double mse = sq / n;
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageD& a, const ImageD& b, const ImageB* mask) {
    return ssim_mean(a, b, mask, nullptr);
}

std::vector<Vec3> fuse_depth(const std::vector<DepthFuseInput>& views, double voxel_size,
                             double alpha_threshold) {
    if (!(voxel_size > 0.0)) throw Error("fuse_depth: voxel size must be positive");
    struct Cell {
        Vec3 sum = Vec3::Zero();
        int count = 0;
    };
    // Ordered map keyed on quantized coordinates keeps the output independent
    // of hash seeding and iteration order.
    std::map<std::array<int64_t, 3>, Cell> grid;
    for (const auto& v : views) {
        for (int y = 0; y < v.depth->height; ++y)
            for (int x = 0; x < v.depth->width; ++x) {
                if (v.alpha->at(y, x) <= alpha_threshold) continue;
                const double d = v.depth->at(y, x);
                if (!(d > 0.0)) continue;
                const Vec3 p = v.camera.cam_to_world(pixel_ray(v.camera, x, y) * d);
                const std::array<int64_t, 3> key = {
                    static_cast<int64_t>(std::floor(p.x() / voxel_size)),
                    static_cast<int64_t>(std::floor(p.y() / voxel_size)),
                    static_cast<int64_t>(std::floor(p.z() / voxel_size))};
                auto& cell = grid[key];
                cell.sum += p;
                ++cell.count;
            }
    }
    std::vector<Vec3> out;
    out.reserve(grid.size());
    for (const auto& kv : grid) out.push_back(kv.second.sum / kv.second.count);
    return out;
}

std::vector<Vec3> fuse_depth(const GaussianScene& scene, const std::vector<CameraModel>& cams,
                             double voxel_size, double alpha_threshold) {
    if (scene.primitives.empty()) throw EmptySceneError("fuse_depth: empty scene");
    if (cams.empty()) throw Error("fuse_depth: no cameras");
    std::vector<RenderOutput> renders;
    renders.reserve(cams.size());
    for (const auto& cam : cams) renders.push_back(render(scene, cam));
    std::vector<DepthFuseInput> inputs;
    for (size_t i = 0; i < cams.size(); ++i)
        inputs.push_back({&renders[i].depth, &renders[i].alpha, cams[i]});
    return fuse_depth(inputs, voxel_size, alpha_threshold);
}

CameraModel transform_camera(const CameraModel& cam, const SimTransform& t) {
    // p_cam = R(q) T^-1(p') + t_cam with the uniform 1/scale folded out: the
    // pinhole projection is invariant to scaling camera-space points, so the
    // returned camera reproduces the image, with depths scaled by t.scale.
    const Eigen::Quaterniond qa_e(t.rotation);
    const Vec4 qa(qa_e.w(), qa_e.x(), qa_e.y(), qa_e.z());
    CameraModel out = cam;
    out.rotation = quat_normalized(quat_mul(cam.rotation, quat_conjugate(qa)));
    out.translation = t.scale * cam.translation - quat_rotate(out.rotation, t.translation);
    return out;
}

}  // namespace splat
