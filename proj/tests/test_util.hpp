#pragma once

#include "splat/core.hpp"
#include "splat/raster.hpp"

#include <algorithm>
#include <random>

namespace testutil {

using namespace splat;

inline CameraModel make_camera(int w = 32, int h = 32, double focal = 40.0) {
    CameraModel cam;
    cam.width = w;
    cam.height = h;
    cam.focal = focal;
    cam.principal = Vec2((w - 1) * 0.5, (h - 1) * 0.5);
    return cam;
}

struct SceneParams {
    double opacity_lo = 0.3, opacity_hi = 0.8;
    double scale_lo = 0.05, scale_hi = 0.18;
    double z_lo = 0.8, z_hi = 1.8;
    double xy = 0.45;
    double sh_dc = 0.8, sh_hi = 0.15;
};

inline GaussianScene random_scene(int n, uint64_t seed, const SceneParams& sp = {}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    GaussianScene s;
    for (int i = 0; i < n; ++i) {
        GaussianPrimitive2D p;
        p.position = Vec3(uni(-sp.xy, sp.xy), uni(-sp.xy, sp.xy), uni(sp.z_lo, sp.z_hi));
        p.rotation = quat_normalized(
            Vec4(uni(-1, 1), uni(-1, 1), uni(-1, 1), uni(-1, 1)));
        p.scale = Vec2(uni(sp.scale_lo, sp.scale_hi), uni(sp.scale_lo, sp.scale_hi));
        p.opacity = uni(sp.opacity_lo, sp.opacity_hi);
        for (int c = 0; c < 3; ++c) {
            p.sh_at(c, 0) = uni(-sp.sh_dc, sp.sh_dc);
            for (int k = 1; k < 16; ++k) p.sh_at(c, k) = uni(-sp.sh_hi, sp.sh_hi);
        }
        s.primitives.push_back(p);
    }
    s.bump();
    return s;
}

// Reference renderer: per pixel, every projected splat in depth order with the
// same cutoff rules, but no tiles and no bounding boxes.
inline RenderOutput brute_force_render(const GaussianScene& scene, const CameraModel& cam,
                                       const RenderOptions& opts = {}) {
    const double sigma_cutoff = std::sqrt(opts.sigma2_cutoff);
    std::vector<ScreenSplat> splats;
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
        auto s = project_primitive(scene.primitives[i], static_cast<int>(i), cam, opts.near,
                                   sigma_cutoff);
        if (s) splats.push_back(*s);
    }
    std::sort(splats.begin(), splats.end(), [](const ScreenSplat& a, const ScreenSplat& b) {
        if (a.mean_depth != b.mean_depth) return a.mean_depth < b.mean_depth;
        return a.prim < b.prim;
    });

    RenderOutput out;
    out.color = ImageD(cam.height, cam.width, 3);
    out.depth = ImageD(cam.height, cam.width, 1);
    out.normal = ImageD(cam.height, cam.width, 3);
    out.alpha = ImageD(cam.height, cam.width, 1);
    out.scene_revision = scene.revision;
    if (opts.track_contrib) {
        out.contrib_weight.assign(scene.primitives.size(), 0.0);
        out.contrib_pixels.assign(scene.primitives.size(), 0);
    }

    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 d = pixel_ray(cam, x, y);
            double T = 1.0, dsum = 0.0, asum = 0.0;
            Vec3 csum = Vec3::Zero(), nsum = Vec3::Zero();
            for (const auto& s : splats) {
                const RayHit hit = ray_splat_intersect(s, d, opts.near);
                if (!hit.ok) continue;
                const double r2 = hit.s1 * hit.s1 + hit.s2 * hit.s2;
                if (r2 > opts.sigma2_cutoff) continue;
                const double alpha = std::min(s.opacity * std::exp(-0.5 * r2), opts.alpha_clamp);
                if (alpha < opts.alpha_cutoff) continue;
                const double w = alpha * T;
                csum += w * s.color;
                nsum += w * s.unit_normal;
                dsum += w * hit.t;
                asum += w;
                if (opts.track_contrib) {
                    out.contrib_weight[s.prim] += w;
                    out.contrib_pixels[s.prim] += 1;
                }
                T *= 1.0 - alpha;
                if (T < opts.term_threshold) break;
            }
            for (int c = 0; c < 3; ++c) out.color.at(y, x, c) = csum[c];
            out.alpha.at(y, x) = asum;
            if (asum > 0.0) {
                out.depth.at(y, x) = dsum / asum;
                for (int c = 0; c < 3; ++c) out.normal.at(y, x, c) = nsum[c] / asum;
            }
        }
    return out;
}

// Eq.-6-style multi-view contributions via the brute-force renderer.
inline std::vector<double> brute_force_contributions(const GaussianScene& scene,
                                                     const std::vector<CameraModel>& cams,
                                                     const RenderOptions& opts_in = {}) {
    RenderOptions opts = opts_in;
    opts.track_contrib = true;
    std::vector<double> c(scene.primitives.size(), 0.0);
    for (const auto& cam : cams) {
        const RenderOutput out = brute_force_render(scene, cam, opts);
        for (size_t i = 0; i < c.size(); ++i)
            if (out.contrib_pixels[i] > 0)
                c[i] += out.contrib_weight[i] / static_cast<double>(out.contrib_pixels[i]);
    }
    return c;
}

inline double max_image_diff(const ImageD& a, const ImageD& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// Render options far from the alpha/sigma thresholds so central differences
// stay valid for gradient checks.
inline RenderOptions smooth_options() {
    RenderOptions o;
    o.sigma2_cutoff = 1e6;
    o.alpha_cutoff = 0.0;
    o.term_threshold = 0.0;
    return o;
}

}  // namespace testutil
