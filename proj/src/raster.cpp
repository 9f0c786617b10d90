#include "splat/raster.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace splat {

RayHit ray_splat_intersect(const ScreenSplat& s, const Vec3& d, double near) {
    RayHit hit;
    // Solve c + s1*a_u + s2*a_v = t*d via Cramer's rule on [a_u a_v -d] w = -c.
    const Vec3& au = s.axis_u;
    const Vec3& av = s.axis_v;
    const Vec3 md = -d;
    const Vec3 av_x_md = av.cross(md);
    const double det = au.dot(av_x_md);
    if (std::abs(det) < 1e-12) return hit;
    const Vec3 b = -s.center_cam;
    const double inv = 1.0 / det;
    hit.s1 = b.dot(av_x_md) * inv;
    hit.s2 = au.dot(b.cross(md)) * inv;
    hit.t = au.dot(av.cross(b)) * inv;
    if (!(hit.t > near)) return hit;
    hit.ok = true;
    return hit;
}

namespace {

// Conservative screen bbox: the splat disk of radius r sigmas lies inside the
// camera-space cube [center - R, center + R]^3 with R = r * max extent; x/z
// and y/z are monotone over that box, so its projected corners bound the disk.
bool conservative_bbox(const Vec3& c, double radius, const CameraModel& cam, double near,
                       int& x0, int& y0, int& x1, int& y1) {
    const double z_lo = std::max(c[2] - radius, near);
    const double z_hi = c[2] + radius;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (double z : {z_lo, z_hi}) {
        for (double dx : {-radius, radius}) {
            const double sx = cam.focal * (c[0] + dx) / z + cam.principal[0];
            xmin = std::min(xmin, sx);
            xmax = std::max(xmax, sx);
        }
        for (double dy : {-radius, radius}) {
            const double sy = cam.focal * (c[1] + dy) / z + cam.principal[1];
            ymin = std::min(ymin, sy);
            ymax = std::max(ymax, sy);
        }
    }
    x0 = std::max(0, static_cast<int>(std::floor(xmin)));
    y0 = std::max(0, static_cast<int>(std::floor(ymin)));
    x1 = std::min(cam.width, static_cast<int>(std::ceil(xmax)) + 1);
    y1 = std::min(cam.height, static_cast<int>(std::ceil(ymax)) + 1);
    return x0 < x1 && y0 < y1;
}

std::optional<ScreenSplat> project_impl(const GaussianPrimitive2D& p, int prim_index,
                                        const CameraModel& cam, double near,
                                        double sigma_cutoff, bool* degenerate) {
    ScreenSplat s;
    s.prim = prim_index;
    s.center_cam = cam.world_to_cam(p.position);
    if (!(s.center_cam[2] > near)) return std::nullopt;
    s.mean_depth = s.center_cam[2];

    const Vec3 eu_w = quat_rotate(p.rotation, Vec3::UnitX());
    const Vec3 ev_w = quat_rotate(p.rotation, Vec3::UnitY());
    const Vec3 en_w = quat_rotate(p.rotation, Vec3::UnitZ());
    s.axis_u = p.scale[0] * quat_rotate(cam.rotation, eu_w);
    s.axis_v = p.scale[1] * quat_rotate(cam.rotation, ev_w);
    const Vec3 n_cam = quat_rotate(cam.rotation, en_w);
    s.normal_flip = n_cam.dot(s.center_cam) > 0.0 ? -1.0 : 1.0;
    s.unit_normal = s.normal_flip * n_cam;

    if (degenerate) {
        *degenerate = std::abs(n_cam.dot(s.center_cam.normalized())) < 1e-12;
        if (*degenerate) return std::nullopt;
    }

    const double radius = sigma_cutoff * std::max(p.scale[0], p.scale[1]);
    if (!conservative_bbox(s.center_cam, radius, cam, near, s.x0, s.y0, s.x1, s.y1))
        return std::nullopt;

    s.opacity = p.opacity;
    s.color = sh_to_rgb(p.sh, s.center_cam.normalized());
    return s;
}

}  // namespace

std::optional<ScreenSplat> project_primitive(const GaussianPrimitive2D& p, int prim_index,
                                             const CameraModel& cam, double near,
                                             double sigma_cutoff) {
    bool degenerate = false;
    auto s = project_impl(p, prim_index, cam, near, sigma_cutoff, &degenerate);
    if (degenerate) throw DegenerateSplatError("splat plane is parallel to the viewing rays");
    return s;
}

double splat_alpha(const ScreenSplat& s, const GaussianPrimitive2D& p, const Vec2& pixel,
                   const CameraModel& cam) {
    const Vec3 d = pixel_ray(cam, pixel[0], pixel[1]);
    const RayHit hit = ray_splat_intersect(s, d, 0.0);
    if (!hit.ok) return 0.0;
    const double g = std::exp(-0.5 * (hit.s1 * hit.s1 + hit.s2 * hit.s2));
    return std::min(p.opacity * g, 0.999);
}

PreparedFrame prepare_frame(const GaussianScene& scene, const CameraModel& cam,
                            const RenderOptions& opts) {
    if (scene.primitives.empty()) throw EmptySceneError("cannot render an empty scene");
    PreparedFrame f;
    f.cam = cam;
    f.opts = opts;
    f.scene_revision = scene.revision;
    const double sigma_cutoff = std::sqrt(opts.sigma2_cutoff);
    f.splats.reserve(scene.primitives.size());
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
        auto s = project_impl(scene.primitives[i], static_cast<int>(i), cam, opts.near,
                              sigma_cutoff, nullptr);
        if (s) f.splats.push_back(*s);
    }
    const int ts = opts.tile_size;
    f.tiles_x = (cam.width + ts - 1) / ts;
    f.tiles_y = (cam.height + ts - 1) / ts;
    f.tile_lists.assign(static_cast<size_t>(f.tiles_x) * f.tiles_y, {});

    // Depth order with index tie-break keeps rendering invariant under
    // primitive-list permutation.
    std::vector<int32_t> order(f.splats.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int32_t>(i);
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (f.splats[a].mean_depth != f.splats[b].mean_depth)
            return f.splats[a].mean_depth < f.splats[b].mean_depth;
        return f.splats[a].prim < f.splats[b].prim;
    });
    for (int32_t idx : order) {
        const ScreenSplat& s = f.splats[idx];
        const int tx0 = s.x0 / ts, tx1 = (s.x1 - 1) / ts;
        const int ty0 = s.y0 / ts, ty1 = (s.y1 - 1) / ts;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                f.tile_lists[static_cast<size_t>(ty) * f.tiles_x + tx].push_back(idx);
    }
    return f;
}

RenderOutput render_prepared(const PreparedFrame& f, size_t primitive_count) {
    const CameraModel& cam = f.cam;
    const RenderOptions& opts = f.opts;
    const int W = cam.width, H = cam.height, ts = opts.tile_size;

    RenderOutput out;
    out.color = ImageD(H, W, 3);
    out.depth = ImageD(H, W, 1);
    out.normal = ImageD(H, W, 3);
    out.alpha = ImageD(H, W, 1);
    out.scene_revision = f.scene_revision;
    if (opts.track_contrib) {
        out.contrib_weight.assign(primitive_count, 0.0);
        out.contrib_pixels.assign(primitive_count, 0);
    }

    const int n_tiles = f.tiles_x * f.tiles_y;
    struct TileContrib {
        std::vector<double> w;
        std::vector<int64_t> px;
    };
    std::vector<TileContrib> tile_contrib(opts.track_contrib ? n_tiles : 0);
    struct TileBlend {
        std::vector<int32_t> counts;          // per pixel of the tile, row-major
        std::vector<BlendSample> samples;     // in pixel scan order
    };
    std::vector<TileBlend> tile_blend(opts.record_blend ? n_tiles : 0);

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < n_tiles; ++tile) {
        const auto& list = f.tile_lists[tile];
        const int tx = tile % f.tiles_x, ty = tile / f.tiles_x;
        const int px0 = tx * ts, px1 = std::min(W, px0 + ts);
        const int py0 = ty * ts, py1 = std::min(H, py0 + ts);
        TileContrib* tc = nullptr;
        if (opts.track_contrib) {
            tc = &tile_contrib[tile];
            tc->w.assign(list.size(), 0.0);
            tc->px.assign(list.size(), 0);
        }
        TileBlend* tb = nullptr;
        if (opts.record_blend) {
            tb = &tile_blend[tile];
            tb->counts.assign(static_cast<size_t>(px1 - px0) * (py1 - py0), 0);
        }
        for (int y = py0; y < py1; ++y) {
            for (int x = px0; x < px1; ++x) {
                const Vec3 d = pixel_ray(cam, x, y);
                double T = 1.0;
                Vec3 csum = Vec3::Zero(), nsum = Vec3::Zero();
                double dsum = 0.0, asum = 0.0;
                int32_t n_recorded = 0;
                for (size_t li = 0; li < list.size(); ++li) {
                    const ScreenSplat& s = f.splats[list[li]];
                    if (x < s.x0 || x >= s.x1 || y < s.y0 || y >= s.y1) continue;
                    const RayHit hit = ray_splat_intersect(s, d, opts.near);
                    if (!hit.ok) continue;
                    const double r2 = hit.s1 * hit.s1 + hit.s2 * hit.s2;
                    if (r2 > opts.sigma2_cutoff) continue;
                    const double g = std::exp(-0.5 * r2);
                    const double alpha = std::min(s.opacity * g, opts.alpha_clamp);
                    if (alpha < opts.alpha_cutoff) continue;
                    const double w = alpha * T;
                    csum += w * s.color;
                    dsum += w * hit.t;
                    nsum += w * s.unit_normal;
                    asum += w;
                    if (tc) {
                        tc->w[li] += w;
                        tc->px[li] += 1;
                    }
                    if (tb) {
                        tb->samples.push_back({s.prim, alpha, w, hit.t});
                        ++n_recorded;
                    }
                    T *= (1.0 - alpha);
                    if (T < opts.term_threshold) break;
                }
                out.color.at(y, x, 0) = csum[0];
                out.color.at(y, x, 1) = csum[1];
                out.color.at(y, x, 2) = csum[2];
                out.alpha.at(y, x) = asum;
                if (asum > 0.0) {
                    out.depth.at(y, x) = dsum / asum;
                    for (int c = 0; c < 3; ++c) out.normal.at(y, x, c) = nsum[c] / asum;
                }
                if (tb) tb->counts[static_cast<size_t>(y - py0) * (px1 - px0) + (x - px0)] =
                    n_recorded;
            }
        }
    }

    // Serial merges in tile order keep results independent of thread count.
    if (opts.track_contrib) {
        for (int tile = 0; tile < n_tiles; ++tile) {
            const auto& list = f.tile_lists[tile];
            const auto& tc = tile_contrib[tile];
            for (size_t li = 0; li < list.size(); ++li) {
                out.contrib_weight[f.splats[list[li]].prim] += tc.w[li];
                out.contrib_pixels[f.splats[list[li]].prim] += tc.px[li];
            }
        }
    }
    if (opts.record_blend) {
        out.blend_offsets.assign(static_cast<size_t>(H) * W + 1, 0);
        for (int tile = 0; tile < n_tiles; ++tile) {
            const int tx = tile % f.tiles_x, ty = tile / f.tiles_x;
            const int px0 = tx * ts, px1 = std::min(W, px0 + ts);
            const int py0 = ty * ts, py1 = std::min(H, py0 + ts);
            const auto& tb = tile_blend[tile];
            for (int y = py0; y < py1; ++y)
                for (int x = px0; x < px1; ++x)
                    out.blend_offsets[static_cast<size_t>(y) * W + x + 1] =
                        tb.counts[static_cast<size_t>(y - py0) * (px1 - px0) + (x - px0)];
        }
        for (size_t i = 1; i < out.blend_offsets.size(); ++i)
            out.blend_offsets[i] += out.blend_offsets[i - 1];
        out.blend_samples.resize(out.blend_offsets.back());
        for (int tile = 0; tile < n_tiles; ++tile) {
            const int tx = tile % f.tiles_x, ty = tile / f.tiles_x;
            const int px0 = tx * ts, px1 = std::min(W, px0 + ts);
            const int py0 = ty * ts, py1 = std::min(H, py0 + ts);
            const auto& tb = tile_blend[tile];
            size_t cursor = 0;
            for (int y = py0; y < py1; ++y) {
                for (int x = px0; x < px1; ++x) {
                    const int32_t n = tb.counts[static_cast<size_t>(y - py0) * (px1 - px0) +
                                                (x - px0)];
                    std::copy_n(tb.samples.begin() + cursor, n,
                                out.blend_samples.begin() +
                                    out.blend_offsets[static_cast<size_t>(y) * W + x]);
                    cursor += n;
                }
            }
        }
    }
    return out;
}

RenderOutput render(const GaussianScene& scene, const CameraModel& cam,
                    const RenderOptions& opts) {
    PreparedFrame f = prepare_frame(scene, cam, opts);
    return render_prepared(f, scene.primitives.size());
}

std::vector<double> accumulate_contributions(const GaussianScene& scene,
                                             const std::vector<CameraModel>& cams,
                                             const RenderOptions& opts_in) {
    if (scene.primitives.empty()) throw EmptySceneError("empty scene");
    if (cams.empty()) throw Error("accumulate_contributions needs at least one camera");
    RenderOptions opts = opts_in;
    opts.track_contrib = true;
    std::vector<double> contrib(scene.primitives.size(), 0.0);
    for (const auto& cam : cams) {
        RenderOutput out = render(scene, cam, opts);
        for (size_t i = 0; i < contrib.size(); ++i)
            if (out.contrib_pixels[i] > 0)
                contrib[i] += out.contrib_weight[i] / static_cast<double>(out.contrib_pixels[i]);
    }
    return contrib;
}

}  // namespace splat
