#include "splat/densify.hpp"

#include "splat/eval.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace splat {

std::vector<ChildDelta> AnalyticDensifier::split(const GaussianPrimitive2D& parent,
                                                 const std::vector<int32_t>&,
                                                 const GaussianScene&, int K) const {
    const TangentFrame frame = tangent_frame(parent);
    std::vector<ChildDelta> out(K);
    for (int k = 0; k < K; ++k) {
        ChildDelta& c = out[k];
        // Alternate +-0.5 sigma along t_u, then t_v for K > 2.
        const int axis = (k / 2) % 2;
        const double sign = (k % 2 == 0) ? 0.5 : -0.5;
        c.d_position = sign * (axis == 0 ? frame.t_u : frame.t_v);
        c.d_scale = -0.5 * parent.scale;  // halved
    }
    return out;
}

GaussianScene backproject(const std::vector<ViewBundle>& views, const BackprojectConfig& cfg) {
    GaussianScene scene;
    for (size_t vi = 0; vi < views.size(); ++vi) {
        const ViewBundle& view = views[vi];
        if (!view.mono_depth)
            throw NoDepthError("view " + std::to_string(vi) + " has no depth map");
        const ImageD& depth = *view.mono_depth;
        const CameraModel& cam = view.camera;
        if (depth.width != view.image.width || depth.height != view.image.height)
            throw ResolutionMismatchError("depth resolution differs from image");
        for (int y = 0; y < depth.height; y += cfg.stride) {
            for (int x = 0; x < depth.width; x += cfg.stride) {
                if (!view.pixel_valid(y, x)) continue;
                const double z = depth.at(y, x);
                if (!std::isfinite(z) || z <= 0.0) continue;
                GaussianPrimitive2D p;
                const Vec3 ray = pixel_ray(cam, x, y);
                p.position = cam.cam_to_world(ray * z);
                // Orient the splat toward the camera: local z maps to the
                // negated viewing ray.
                const Vec3 to_cam = -quat_rotate(quat_conjugate(cam.rotation), ray).normalized();
                const Vec3 ref = std::abs(to_cam[0]) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
                const Vec3 u = ref.cross(to_cam).normalized();
                const Vec3 v = to_cam.cross(u);
                Mat3 rot;
                rot.col(0) = u;
                rot.col(1) = v;
                rot.col(2) = to_cam;
                Eigen::Quaterniond q(rot);
                p.rotation = quat_normalized(Vec4(q.w(), q.x(), q.y(), q.z()));
                const double footprint = cfg.scale_factor * cfg.stride * z / cam.focal;
                p.scale = Vec2(footprint, footprint);
                p.opacity = cfg.opacity;
                constexpr double kSH0 = 0.28209479177387814;
                for (int c = 0; c < 3; ++c)
                    p.sh_at(c, 0) = (view.image.at(y, x, c) - 0.5) / kSH0;
                scene.primitives.push_back(p);
            }
        }
    }
    scene.bump();
    return scene;
}

double align_mono_depth(ImageD& mono, const ImageD* metric_ref, const ImageB* mask) {
    std::vector<double> ratios;
    std::vector<double> values;
    for (int y = 0; y < mono.height; ++y) {
        for (int x = 0; x < mono.width; ++x) {
            if (mask && mask->at(y, x) == 0) continue;
            const double m = mono.at(y, x);
            if (!std::isfinite(m) || m <= 0.0) continue;
            values.push_back(m);
            if (metric_ref) {
                const double r = metric_ref->at(y, x);
                if (std::isfinite(r) && r > 0.0) ratios.push_back(r / m);
            }
        }
    }
    double scale = 1.0;
    auto median = [](std::vector<double>& v) {
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        return v[v.size() / 2];
    };
    if (!ratios.empty())
        scale = median(ratios);
    else if (!values.empty())
        scale = 1.0 / median(values);
    for (double& v : mono.data) v *= scale;
    return scale;
}

GaussianScene normalize_scene(const GaussianScene& s, SceneNormalization& params) {
    if (s.primitives.empty()) throw EmptySceneError("cannot normalize an empty scene");
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : s.primitives) centroid += p.position;
    centroid /= static_cast<double>(s.primitives.size());
    double max_norm = 0.0;
    for (const auto& p : s.primitives)
        max_norm = std::max(max_norm, (p.position - centroid).cwiseAbs().maxCoeff());
    if (!(max_norm > 0.0))
        throw DegenerateExtentError("all primitive positions coincide");
    params.centroid = centroid;
    params.scale = max_norm;
    GaussianScene out = s;
    for (auto& p : out.primitives) {
        p.position = (p.position - centroid) / max_norm;
        p.scale /= max_norm;
    }
    out.normalization = params;
    out.bump();
    return out;
}

GaussianScene denormalize_scene(const GaussianScene& s, const SceneNormalization& params) {
    GaussianScene out = s;
    for (auto& p : out.primitives) {
        p.position = p.position * params.scale + params.centroid;
        p.scale *= params.scale;
    }
    out.normalization.reset();
    out.bump();
    return out;
}

PatchSet knn_partition(const GaussianScene& s, int patch_size, uint64_t seed) {
    if (patch_size < 1) throw Error("patch_size must be >= 1");
    const size_t n = s.primitives.size();
    PatchSet set;
    set.patch_size = patch_size;
    std::vector<int32_t> uncovered(n);
    std::iota(uncovered.begin(), uncovered.end(), 0);
    std::mt19937_64 rng(seed);
    std::vector<std::pair<double, int32_t>> dist;
    while (!uncovered.empty()) {
        const size_t pick = rng() % uncovered.size();
        const Vec3 seed_pos = s.primitives[uncovered[pick]].position;
        dist.clear();
        dist.reserve(uncovered.size());
        for (int32_t idx : uncovered)
            dist.emplace_back((s.primitives[idx].position - seed_pos).squaredNorm(), idx);
        const size_t take = std::min<size_t>(patch_size, dist.size());
        std::partial_sort(dist.begin(), dist.begin() + take, dist.end());
        std::vector<int32_t> patch(take);
        for (size_t i = 0; i < take; ++i) patch[i] = dist[i].second;
        std::sort(patch.begin(), patch.end());
        set.patches.push_back(patch);
        std::vector<int32_t> rest;
        rest.reserve(uncovered.size() - take);
        size_t j = 0;
        for (int32_t idx : uncovered) {
            // patch is sorted; uncovered is sorted too, so a merge walk works.
            while (j < patch.size() && patch[j] < idx) ++j;
            if (j < patch.size() && patch[j] == idx) continue;
            rest.push_back(idx);
        }
        uncovered.swap(rest);
    }
    return set;
}

std::vector<GaussianPrimitive2D> self_split(const std::vector<int32_t>& patch,
                                            const GaussianScene& scene,
                                            const Densifier& densifier, int K) {
    if (K < 1) throw Error("split factor K must be >= 1");
    std::vector<GaussianPrimitive2D> children;
    children.reserve(patch.size() * K);
    for (int32_t idx : patch) {
        const GaussianPrimitive2D& parent = scene.primitives[idx];
        const auto deltas = densifier.split(parent, patch, scene, K);
        if (static_cast<int>(deltas.size()) != K)
            throw InvalidDeltaError("densifier returned wrong child count");
        for (const ChildDelta& d : deltas) {
            GaussianPrimitive2D child = parent;
            child.position += d.d_position;
            child.rotation += d.d_rotation;
            child.scale += d.d_scale;
            child.opacity += d.d_opacity;
            for (int k = 0; k < 48; ++k) child.sh[k] += d.d_sh[k];
            try {
                children.push_back(validate_primitive(child));
            } catch (const Error& e) {
                throw InvalidDeltaError(std::string("split child failed validation: ") +
                                        e.what());
            }
        }
    }
    return children;
}

GaussianScene densify_scene(const GaussianScene& s, const DensifyConfig& cfg) {
    const AnalyticDensifier analytic;
    const Densifier& densifier = cfg.densifier ? *cfg.densifier : analytic;
    SceneNormalization params;
    GaussianScene normalized = normalize_scene(s, params);
    PatchSet patches = knn_partition(normalized, cfg.patch_size, cfg.seed);
    GaussianScene merged = normalized;
    merged.primitives.reserve(normalized.size() * (1 + cfg.K));
    for (const auto& patch : patches.patches) {
        auto children = self_split(patch, normalized, densifier, cfg.K);
        merged.primitives.insert(merged.primitives.end(), children.begin(), children.end());
    }
    merged.bump();
    return denormalize_scene(merged, params);
}

namespace {

// World-space lift of a valid depth pixel; false for invalid/missing depth.
bool lift_pixel(const ViewBundle& v, const CameraModel& cam, int x, int y, Vec3& out) {
    if (x < 0 || y < 0 || x >= v.mono_depth->width || y >= v.mono_depth->height) return false;
    if (!v.pixel_valid(y, x)) return false;
    const double d = v.mono_depth->at(y, x);
    if (!std::isfinite(d) || d <= 0.0) return false;
    out = cam.cam_to_world(pixel_ray(cam, x, y) * d);
    return true;
}

double trimmed_median(std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
}

// Solves the 6x6 Gauss-Newton normal equations of a rigid pose correction.
// Pseudo-inverse with an eigenvalue floor: unobservable components get a
// zero update; a trust region keeps a noisy first step inside the basin.
bool pose_step_from_normal_eq(const Eigen::Matrix<double, 6, 6>& A,
                              const Eigen::Matrix<double, 6, 1>& b, SimTransform& step) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(A);
    const Eigen::Matrix<double, 6, 1> ev = es.eigenvalues();
    const double emax = ev.maxCoeff();
    if (!(emax > 0.0)) return false;
    Eigen::Matrix<double, 6, 1> inv = Eigen::Matrix<double, 6, 1>::Zero();
    for (int k = 0; k < 6; ++k)
        if (ev[k] > 1e-2 * emax) inv[k] = 1.0 / ev[k];
    const Eigen::Matrix<double, 6, 1> xi =
        es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() * b;
    Vec3 w = xi.head<3>(), t = xi.tail<3>();
    if (!w.allFinite() || !t.allFinite()) return false;
    const double wcap = 0.1, tcap = 0.2;
    if (w.norm() > wcap) {
        t *= wcap / w.norm();
        w *= wcap / w.norm();
    }
    if (t.norm() > tcap) {
        w *= tcap / t.norm();
        t *= tcap / t.norm();
    }
    const double angle = w.norm();
    step.rotation = Eigen::AngleAxisd(angle, angle > 1e-15 ? Vec3(w / angle) : Vec3::UnitX())
                        .toRotationMatrix();
    step.translation = t;
    return true;
}

// Grayscale pyramid level with bilinear sampling and image-space gradient.
struct GrayLevel {
    int w = 0, h = 0;
    int scale = 1;  // full-res pixels per cell
    std::vector<double> v;

    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }

    // Samples at full-resolution pixel coordinates; false outside the level.
    bool sample(double xf, double yf, double& val, double& gx, double& gy) const {
        const double x = (xf - 0.5 * (scale - 1)) / scale;
        const double y = (yf - 0.5 * (scale - 1)) / scale;
        const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        if (x0 < 0 || y0 < 0 || x0 + 1 >= w || y0 + 1 >= h) return false;
        const double fx = x - x0, fy = y - y0;
        const double v00 = at(y0, x0), v01 = at(y0, x0 + 1);
        const double v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
        val = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        // Gradient in full-resolution pixel units (chain rule through the
        // level's downscale).
        gx = ((1 - fy) * (v01 - v00) + fy * (v11 - v10)) / scale;
        gy = ((1 - fx) * (v10 - v00) + fx * (v11 - v01)) / scale;
        return true;
    }
};

GrayLevel to_gray(const ImageD& img) {
    GrayLevel g;
    g.w = img.width;
    g.h = img.height;
    g.scale = 1;
    g.v.resize(static_cast<size_t>(g.w) * g.h);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            g.at(y, x) = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
    return g;
}

GrayLevel downsample(const GrayLevel& in) {
    GrayLevel g;
    g.w = in.w / 2;
    g.h = in.h / 2;
    g.scale = in.scale * 2;
    g.v.resize(static_cast<size_t>(g.w) * g.h);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            g.at(y, x) = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) +
                                 in.at(2 * y + 1, 2 * x) + in.at(2 * y + 1, 2 * x + 1));
    return g;
}

}  // namespace

std::vector<CameraModel> register_views_by_depth(const std::vector<ViewBundle>& views,
                                                 int reference, int iterations, int stride) {
    if (views.empty()) throw EmptySceneError("no views to register");
    if (reference < 0 || reference >= static_cast<int>(views.size()))
        throw DegenerateConfigurationError("reference view index out of range");
    if (iterations < 0 || stride < 1)
        throw DegenerateConfigurationError("invalid registration parameters");
    for (size_t vi = 0; vi < views.size(); ++vi)
        if (!views[vi].mono_depth)
            throw NoDepthError("view " + std::to_string(vi) + " has no depth map");

    std::vector<CameraModel> out;
    out.reserve(views.size());
    for (const ViewBundle& v : views) out.push_back(v.camera);

    const ViewBundle& ref = views[reference];
    const ImageD& ref_depth = *ref.mono_depth;
    for (size_t vi = 0; vi < views.size(); ++vi) {
        if (static_cast<int>(vi) == reference) continue;
        const ViewBundle& view = views[vi];
        for (int it = 0; it < iterations; ++it) {
            const CameraModel& cam = out[vi];
            // Dense projective association against the reference view, with
            // a reference-surface normal per correspondence for the
            // point-to-plane objective (point-to-point is unstable on
            // grazing surfaces).
            std::vector<Vec3> src, dst, normals;
            std::vector<double> res;
            for (int y = 1; y < ref_depth.height - 1; y += stride) {
                for (int x = 1; x < ref_depth.width - 1; x += stride) {
                    Vec3 X, xr, xl, xu, xd;
                    if (!lift_pixel(ref, ref.camera, x, y, X)) continue;
                    if (!lift_pixel(ref, ref.camera, x + 1, y, xr) ||
                        !lift_pixel(ref, ref.camera, x - 1, y, xl) ||
                        !lift_pixel(ref, ref.camera, x, y + 1, xd) ||
                        !lift_pixel(ref, ref.camera, x, y - 1, xu))
                        continue;
                    Vec3 n = (xr - xl).cross(xd - xu);
                    const double nn = n.norm();
                    if (nn < 1e-12) continue;
                    n /= nn;
                    const Vec3 pc = cam.world_to_cam(X);
                    if (pc.z() <= 1e-9) continue;
                    const int qx = static_cast<int>(
                        std::lround(cam.focal * pc.x() / pc.z() + cam.principal[0]));
                    const int qy = static_cast<int>(
                        std::lround(cam.focal * pc.y() / pc.z() + cam.principal[1]));
                    Vec3 Y;
                    if (!lift_pixel(view, cam, qx, qy, Y)) continue;
                    src.push_back(Y);
                    dst.push_back(X);
                    normals.push_back(n);
                    res.push_back(std::abs((Y - X).dot(n)));
                }
            }
            if (src.size() < 6) break;
            // Correspondences beyond 3x the median plane residual are
            // occlusion mismatches, not views of the same surface point.
            const double med = trimmed_median(res);
            if (med < 1e-12) break;  // converged
            const double cutoff = 3.0 * med;
            // One Gauss-Newton step of the point-to-plane objective
            // sum((R*Y + t - X) . n)^2 with R linearized about identity.
            Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
            Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
            for (size_t k = 0; k < src.size(); ++k) {
                if (res[k] > cutoff) continue;
                Eigen::Matrix<double, 6, 1> J;
                J << src[k].cross(normals[k]), normals[k];
                A += J * J.transpose();
                b -= J * (src[k] - dst[k]).dot(normals[k]);
            }
            // Components the depth maps cannot observe (in-plane sliding on
            // a plane, rotation about a sphere center) get a zero update and
            // are left for photometric refinement.
            SimTransform step;
            if (!pose_step_from_normal_eq(A, b, step)) break;
            // Accept the step only if the trimmed residual improves; on
            // weakly-observable geometry further steps only fit noise.
            std::vector<double> res_new;
            res_new.reserve(src.size());
            for (size_t k = 0; k < src.size(); ++k)
                if (res[k] <= cutoff)
                    res_new.push_back(std::abs((step.apply(src[k]) - dst[k]).dot(normals[k])));
            if (trimmed_median(res_new) >= med) break;
            out[vi] = transform_camera(out[vi], step);
        }
    }
    return out;
}

std::vector<CameraModel> register_views_photometric(const std::vector<ViewBundle>& views,
                                                    int reference, int iterations,
                                                    int stride) {
    if (views.empty()) throw EmptySceneError("no views to register");
    if (reference < 0 || reference >= static_cast<int>(views.size()))
        throw DegenerateConfigurationError("reference view index out of range");
    if (iterations < 0 || stride < 1)
        throw DegenerateConfigurationError("invalid registration parameters");
    const ViewBundle& ref = views[reference];
    if (!ref.mono_depth) throw NoDepthError("reference view has no depth map");

    std::vector<CameraModel> out;
    out.reserve(views.size());
    for (const ViewBundle& v : views) out.push_back(v.camera);

    const GrayLevel ref_full = to_gray(ref.image);
    const std::array<GrayLevel, 2> ref_pyr = {downsample(ref_full), ref_full};
    const ImageD& ref_depth = *ref.mono_depth;

    for (size_t vi = 0; vi < views.size(); ++vi) {
        if (static_cast<int>(vi) == reference) continue;
        const ViewBundle& view = views[vi];
        const GrayLevel view_full = to_gray(view.image);
        const std::array<GrayLevel, 2> view_pyr = {downsample(view_full), view_full};
        // Coarse-to-fine: the half-resolution level doubles the convergence
        // basin in pixel terms, the full level refines.
        for (int level = 0; level < 2; ++level) {
            const GrayLevel& ref_img = ref_pyr[level];
            const GrayLevel& view_img = view_pyr[level];
            const int step_px = stride * (level == 0 ? 2 : 1);
            // Reference-side geometry and intensities do not depend on the
            // pose estimate; collect them once per level.
            std::vector<Vec3> pts;
            std::vector<double> refs;
            for (int y = 0; y < ref_depth.height; y += step_px) {
                for (int x = 0; x < ref_depth.width; x += step_px) {
                    Vec3 X;
                    if (!lift_pixel(ref, ref.camera, x, y, X)) continue;
                    double c_ref, dum0, dum1;
                    if (!ref_img.sample(x, y, c_ref, dum0, dum1)) continue;
                    pts.push_back(X);
                    refs.push_back(c_ref);
                }
            }
            if (pts.size() < 6) continue;
            // Trimmed median |residual| at a candidate pose, used both for
            // the robust cutoff and the step-acceptance test below.
            const auto eval_median = [&](const CameraModel& cam) -> double {
                std::vector<double> mag;
                mag.reserve(pts.size());
                for (size_t k = 0; k < pts.size(); ++k) {
                    const Vec3 pc = cam.world_to_cam(pts[k]);
                    if (pc.z() <= 1e-9) continue;
                    const double u = cam.focal * pc.x() / pc.z() + cam.principal[0];
                    const double v = cam.focal * pc.y() / pc.z() + cam.principal[1];
                    const int qx = static_cast<int>(std::lround(u));
                    const int qy = static_cast<int>(std::lround(v));
                    double c, gx, gy;
                    if (qx < 0 || qy < 0 || qx >= view.image.width ||
                        qy >= view.image.height || !view.pixel_valid(qy, qx) ||
                        !view_img.sample(u, v, c, gx, gy))
                        continue;
                    mag.push_back(std::abs(c - refs[k]));
                }
                if (mag.size() < 6) return std::numeric_limits<double>::infinity();
                return trimmed_median(mag);
            };
            for (int it = 0; it < iterations; ++it) {
                const CameraModel& cam = out[vi];
                std::vector<double> resid;
                std::vector<Eigen::Matrix<double, 6, 1>> jac;
                for (size_t k = 0; k < pts.size(); ++k) {
                    const Vec3& X = pts[k];
                    const Vec3 pc = cam.world_to_cam(X);
                    if (pc.z() <= 1e-9) continue;
                    const double u = cam.focal * pc.x() / pc.z() + cam.principal[0];
                    const double v = cam.focal * pc.y() / pc.z() + cam.principal[1];
                    const int qx = static_cast<int>(std::lround(u));
                    const int qy = static_cast<int>(std::lround(v));
                    if (qx < 0 || qy < 0 || qx >= view.image.width ||
                        qy >= view.image.height || !view.pixel_valid(qy, qx))
                        continue;
                    double c, gx, gy;
                    if (!view_img.sample(u, v, c, gx, gy)) continue;
                    // d(pixel)/d(camera point), then through the rigid
                    // world correction T(X) = X + w x X + t.
                    const double iz = 1.0 / pc.z();
                    Eigen::Matrix<double, 2, 3> jp;
                    jp << cam.focal * iz, 0.0, -cam.focal * pc.x() * iz * iz,  //
                        0.0, cam.focal * iz, -cam.focal * pc.y() * iz * iz;
                    const Eigen::Matrix<double, 1, 3> jw =
                        Eigen::Matrix<double, 1, 2>(gx, gy) * jp * quat_to_mat(cam.rotation);
                    Eigen::Matrix<double, 6, 1> J;
                    J.head<3>() = X.cross(Vec3(jw.transpose()));
                    J.tail<3>() = jw.transpose();
                    resid.push_back(c - refs[k]);
                    jac.push_back(J);
                }
                if (resid.size() < 6) break;
                std::vector<double> mag(resid.size());
                for (size_t k = 0; k < resid.size(); ++k) mag[k] = std::abs(resid[k]);
                const double med = trimmed_median(mag);
                if (med < 1e-9) break;  // converged
                const double cutoff = 3.0 * med;
                Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
                Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
                for (size_t k = 0; k < resid.size(); ++k) {
                    if (mag[k] > cutoff) continue;
                    A += jac[k] * jac[k].transpose();
                    b -= jac[k] * resid[k];
                }
                SimTransform step;
                if (!pose_step_from_normal_eq(A, b, step)) break;
                // The solve moves the *reference points* into this view's
                // image; the equivalent camera correction is the inverse
                // (transform_camera composes the forward world transform).
                SimTransform inv;
                inv.rotation = step.rotation.transpose();
                inv.translation = -(step.rotation.transpose() * step.translation);
                const CameraModel tentative = transform_camera(out[vi], inv);
                // Rendering differences between views (visibility, splat
                // anti-aliasing at silhouettes) leave a structured residual
                // floor even at the true pose; accept a step only if the
                // trimmed median actually improves so that floor cannot
                // drive the pose away from a correct estimate.
                if (eval_median(tentative) >= med) break;
                out[vi] = tentative;
            }
        }
    }
    return out;
}

GaussianScene prune_by_contribution(const GaussianScene& s,
                                    const std::vector<CameraModel>& cams, double fraction,
                                    double opacity_floor, const RenderOptions& opts,
                                    std::vector<int32_t>* kept) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("fraction must be in [0,1)");
    const size_t n = s.primitives.size();
    const std::vector<double> contrib = accumulate_contributions(s, cams, opts);

    const size_t n_lowest = static_cast<size_t>(std::floor(fraction * static_cast<double>(n)));
    std::vector<int32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (contrib[a] != contrib[b]) return contrib[a] < contrib[b];
        return a < b;  // tie-break by index
    });
    std::vector<char> remove(n, 0);
    for (size_t i = 0; i < n_lowest; ++i) remove[order[i]] = 1;
    for (size_t i = 0; i < n; ++i)
        if (s.primitives[i].opacity < opacity_floor) remove[i] = 1;

    GaussianScene out;
    out.primitives.reserve(n);
    if (kept) kept->clear();
    for (size_t i = 0; i < n; ++i)
        if (!remove[i]) {
            out.primitives.push_back(s.primitives[i]);
            if (kept) kept->push_back(static_cast<int32_t>(i));
        }
    if (out.primitives.empty())
        throw EmptyAfterPruneError("pruning would remove every primitive");
    out.normalization = s.normalization;
    out.revision = s.revision;
    out.bump();
    return out;
}

}  // namespace splat
