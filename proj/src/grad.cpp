#include "splat/grad.hpp"

#include <algorithm>
#include <cmath>

namespace splat {

void GradientBuffer::add(const GradientBuffer& o) {
    for (size_t i = 0; i < d_position.size(); ++i) {
        d_position[i] += o.d_position[i];
        d_rotation[i] += o.d_rotation[i];
        d_scale[i] += o.d_scale[i];
        d_opacity[i] += o.d_opacity[i];
        for (int k = 0; k < 48; ++k) d_sh[i][k] += o.d_sh[i][k];
        abs_pos_grad[i] += o.abs_pos_grad[i];
        sum_pos_grad[i] += o.sum_pos_grad[i];
    }
    d_cam_translation += o.d_cam_translation;
    d_cam_rotation += o.d_cam_rotation;
}

void LossGrads::add(const LossGrads& o) {
    for (size_t i = 0; i < d_color.data.size(); ++i) d_color.data[i] += o.d_color.data[i];
    for (size_t i = 0; i < d_depth.data.size(); ++i) d_depth.data[i] += o.d_depth.data[i];
    for (size_t i = 0; i < d_normal.data.size(); ++i) d_normal.data[i] += o.d_normal.data[i];
    for (size_t i = 0; i < d_alpha.data.size(); ++i) d_alpha.data[i] += o.d_alpha.data[i];
    if (!o.d_blend_weight.empty()) {
        if (d_blend_weight.empty()) d_blend_weight.assign(o.d_blend_weight.size(), 0.0);
        for (size_t i = 0; i < o.d_blend_weight.size(); ++i)
            d_blend_weight[i] += o.d_blend_weight[i];
    }
    if (!o.d_blend_depth.empty()) {
        if (d_blend_depth.empty()) d_blend_depth.assign(o.d_blend_depth.size(), 0.0);
        for (size_t i = 0; i < o.d_blend_depth.size(); ++i)
            d_blend_depth[i] += o.d_blend_depth[i];
    }
}

std::pair<double, Vec2> abs_accumulate(const std::vector<Vec2>& grads) {
    double abs_sum = 0.0;
    Vec2 sum = Vec2::Zero();
    for (const Vec2& g : grads) {
        abs_sum += g.norm();
        sum += g;
    }
    return {abs_sum, sum};
}

namespace {

// Per-screen-splat gradient slots in camera space, before chaining back to
// primitive attributes and the pose.
struct SplatGrad {
    Vec3 d_center = Vec3::Zero();
    Vec3 d_axis_u = Vec3::Zero();
    Vec3 d_axis_v = Vec3::Zero();
    Vec3 d_normal = Vec3::Zero();
    Vec3 d_color = Vec3::Zero();
    double d_opacity = 0.0;
    double abs_screen = 0.0;
    Vec2 sum_screen = Vec2::Zero();
};

struct ReplayEntry {
    int32_t list_index;
    double alpha;
    double g;  // Gaussian falloff
    double s1, s2, t;
    double transmittance;  // T at this entry
    bool clamped;
};

}  // namespace

GradientBuffer backward(const GaussianScene& scene, const CameraModel& cam,
                        const RenderOutput& rendered, const LossGrads& grads,
                        const RenderOptions& opts) {
    if (rendered.scene_revision != scene.revision)
        throw StaleRenderError("render bookkeeping does not match scene revision");
    const bool has_record_grads =
        !grads.d_blend_weight.empty() || !grads.d_blend_depth.empty();
    if (has_record_grads && rendered.blend_offsets.empty())
        throw StaleRenderError("blend-record gradients given but render has no records");

    PreparedFrame f = prepare_frame(scene, cam, opts);
    const int W = cam.width, H = cam.height, ts = opts.tile_size;
    const int n_tiles = f.tiles_x * f.tiles_y;

    std::vector<std::vector<SplatGrad>> tile_grads(n_tiles);

#pragma omp parallel
    {
        std::vector<ReplayEntry> entries;
#pragma omp for schedule(dynamic)
        for (int tile = 0; tile < n_tiles; ++tile) {
            const auto& list = f.tile_lists[tile];
            auto& tg = tile_grads[tile];
            tg.assign(list.size(), SplatGrad{});
            const int tx = tile % f.tiles_x, ty = tile / f.tiles_x;
            const int px0 = tx * ts, px1 = std::min(W, px0 + ts);
            const int py0 = ty * ts, py1 = std::min(H, py0 + ts);
            for (int y = py0; y < py1; ++y) {
                for (int x = px0; x < px1; ++x) {
                    const Vec3 d = pixel_ray(cam, x, y);
                    entries.clear();

                    // Replay the forward blend to recover per-entry state.
                    double T = 1.0;
                    Vec3 nsum = Vec3::Zero();
                    double dsum = 0.0, asum = 0.0;
                    for (size_t li = 0; li < list.size(); ++li) {
                        const ScreenSplat& s = f.splats[list[li]];
                        if (x < s.x0 || x >= s.x1 || y < s.y0 || y >= s.y1) continue;
                        const RayHit hit = ray_splat_intersect(s, d, opts.near);
                        if (!hit.ok) continue;
                        const double r2 = hit.s1 * hit.s1 + hit.s2 * hit.s2;
                        if (r2 > opts.sigma2_cutoff) continue;
                        const double g = std::exp(-0.5 * r2);
                        const double raw = s.opacity * g;
                        const double alpha = std::min(raw, opts.alpha_clamp);
                        if (alpha < opts.alpha_cutoff) continue;
                        entries.push_back({static_cast<int32_t>(li), alpha, g, hit.s1, hit.s2,
                                           hit.t, T, raw > opts.alpha_clamp});
                        const double w = alpha * T;
                        dsum += w * hit.t;
                        nsum += w * s.unit_normal;
                        asum += w;
                        T *= (1.0 - alpha);
                        if (T < opts.term_threshold) break;
                    }
                    if (entries.empty()) continue;

                    // Upstream gradients of this pixel's buffers; depth/normal
                    // are normalized by the accumulated alpha.
                    const Vec3 gC(grads.d_color.at(y, x, 0), grads.d_color.at(y, x, 1),
                                  grads.d_color.at(y, x, 2));
                    const Vec3 gNout(grads.d_normal.at(y, x, 0), grads.d_normal.at(y, x, 1),
                                     grads.d_normal.at(y, x, 2));
                    const double gDout = grads.d_depth.at(y, x);
                    double gA = grads.d_alpha.at(y, x);
                    double gDsum = 0.0;
                    Vec3 gNsum = Vec3::Zero();
                    if (asum > 0.0) {
                        gDsum = gDout / asum;
                        gNsum = gNout / asum;
                        gA += -(gDout * dsum + gNout.dot(nsum)) / (asum * asum);
                    }

                    const double* rec_dw = nullptr;
                    const double* rec_dz = nullptr;
                    if (has_record_grads) {
                        const size_t off = rendered.blend_offsets[static_cast<size_t>(y) * W + x];
                        if (!grads.d_blend_weight.empty()) rec_dw = &grads.d_blend_weight[off];
                        if (!grads.d_blend_depth.empty()) rec_dz = &grads.d_blend_depth[off];
                    }

                    // Back-to-front sweep with a suffix accumulator.
                    double suffix = 0.0;  // sum over later entries of w_j * psi_j
                    for (int i = static_cast<int>(entries.size()) - 1; i >= 0; --i) {
                        const ReplayEntry& e = entries[i];
                        const ScreenSplat& s = f.splats[list[e.list_index]];
                        SplatGrad& sg = tg[e.list_index];
                        const double w = e.alpha * e.transmittance;

                        double psi = gC.dot(s.color) + gDsum * e.t + gNsum.dot(s.unit_normal) + gA;
                        if (rec_dw) psi += rec_dw[i];
                        const double d_alpha =
                            e.transmittance * psi - suffix / (1.0 - e.alpha);
                        suffix += w * psi;

                        double gt = gDsum * w;
                        if (rec_dz) gt += rec_dz[i];

                        sg.d_color += w * gC;
                        sg.d_normal += w * gNsum;
                        double gG = 0.0;
                        if (!e.clamped) {
                            sg.d_opacity += e.g * d_alpha;
                            gG = s.opacity * d_alpha;
                        }
                        const double gs1 = -e.s1 * e.g * gG;
                        const double gs2 = -e.s2 * e.g * gG;

                        // Backward of the 3x3 solve M w = -c, M = [a_u a_v -d]:
                        // q = M^-T (gs1, gs2, gt); dc = -q; da_u = -q s1; da_v = -q s2.
                        const Vec3 c1 = s.axis_u, c2 = s.axis_v, c3 = -d;
                        const double det = c1.dot(c2.cross(c3));
                        if (std::abs(det) < 1e-12) continue;
                        const Vec3 q =
                            (gs1 * c2.cross(c3) + gs2 * c3.cross(c1) + gt * c1.cross(c2)) / det;
                        sg.d_center += -q;
                        sg.d_axis_u += -q * e.s1;
                        sg.d_axis_v += -q * e.s2;

                        // Screen-space equivalent of the per-pixel position
                        // gradient (perturbing the projected center at fixed depth).
                        const Vec2 g_screen = (s.mean_depth / cam.focal) * Vec2(-q[0], -q[1]);
                        sg.abs_screen += g_screen.norm();
                        sg.sum_screen += g_screen;
                    }
                }
            }
        }
    }

    // Merge tiles in fixed order, then chain camera-space gradients back to
    // primitive attributes and the pose.
    std::vector<SplatGrad> per_splat(f.splats.size());
    for (int tile = 0; tile < n_tiles; ++tile) {
        const auto& list = f.tile_lists[tile];
        for (size_t li = 0; li < list.size(); ++li) {
            SplatGrad& dst = per_splat[list[li]];
            const SplatGrad& src = tile_grads[tile][li];
            dst.d_center += src.d_center;
            dst.d_axis_u += src.d_axis_u;
            dst.d_axis_v += src.d_axis_v;
            dst.d_normal += src.d_normal;
            dst.d_color += src.d_color;
            dst.d_opacity += src.d_opacity;
            dst.abs_screen += src.abs_screen;
            dst.sum_screen += src.sum_screen;
        }
    }

    GradientBuffer out;
    out.resize(scene.primitives.size());
    Vec4 dq_cam = Vec4::Zero();

    for (size_t si = 0; si < f.splats.size(); ++si) {
        const ScreenSplat& s = f.splats[si];
        const SplatGrad& sg = per_splat[si];
        const GaussianPrimitive2D& p = scene.primitives[s.prim];
        Vec3 d_center = sg.d_center;
        Vec4 dq_prim = Vec4::Zero();

        // Color through SH and the per-splat view direction.
        {
            std::array<double, 16> basis;
            std::array<Vec3, 16> basis_grad;
            const double cn = s.center_cam.norm();
            const Vec3 dir = s.center_cam / cn;
            sh_basis_with_grad(dir, basis, basis_grad);
            Vec3 ddir = Vec3::Zero();
            for (int ch = 0; ch < 3; ++ch) {
                double v = 0.5;
                for (int k = 0; k < 16; ++k) v += p.sh[ch * 16 + k] * basis[k];
                if (v <= 0.0 || v >= 1.0) continue;  // clamped channel
                const double gch = sg.d_color[ch];
                for (int k = 0; k < 16; ++k) {
                    out.d_sh[s.prim][ch * 16 + k] += gch * basis[k];
                    ddir += gch * p.sh[ch * 16 + k] * basis_grad[k];
                }
            }
            d_center += (ddir - dir * dir.dot(ddir)) / cn;
        }

        out.d_opacity[s.prim] += sg.d_opacity;
        out.abs_pos_grad[s.prim] += sg.abs_screen;
        out.sum_pos_grad[s.prim] += sg.sum_screen;

        // center = R_cam * p + t_cam
        out.d_cam_translation += d_center;
        const Vec3 dp_world = quat_rotate_backward(cam.rotation, p.position, d_center, dq_cam);
        out.d_position[s.prim] += dp_world;

        // axis_u = scale.x * R_cam * (R_prim * e1), likewise axis_v; the
        // blending normal is flip * R_cam * (R_prim * e3).
        const Vec3 e1w = quat_rotate(p.rotation, Vec3::UnitX());
        const Vec3 e2w = quat_rotate(p.rotation, Vec3::UnitY());
        const Vec3 e3w = quat_rotate(p.rotation, Vec3::UnitZ());
        out.d_scale[s.prim][0] += sg.d_axis_u.dot(quat_rotate(cam.rotation, e1w));
        out.d_scale[s.prim][1] += sg.d_axis_v.dot(quat_rotate(cam.rotation, e2w));
        const Vec3 de1w =
            quat_rotate_backward(cam.rotation, e1w, p.scale[0] * sg.d_axis_u, dq_cam);
        const Vec3 de2w =
            quat_rotate_backward(cam.rotation, e2w, p.scale[1] * sg.d_axis_v, dq_cam);
        const Vec3 de3w =
            quat_rotate_backward(cam.rotation, e3w, s.normal_flip * sg.d_normal, dq_cam);
        quat_rotate_backward(p.rotation, Vec3::UnitX(), de1w, dq_prim);
        quat_rotate_backward(p.rotation, Vec3::UnitY(), de2w, dq_prim);
        quat_rotate_backward(p.rotation, Vec3::UnitZ(), de3w, dq_prim);

        out.d_rotation[s.prim] += quat_project_gradient(p.rotation, dq_prim);
    }

    out.d_cam_rotation = quat_project_gradient(cam.rotation, dq_cam);
    return out;
}

FiniteDiffReport finite_diff_check(const GaussianScene& scene, const CameraModel& cam,
                                   const RenderOptions& opts, const LossFn& loss,
                                   const LossGradFn& loss_grad, double step, double abs_tol,
                                   double rel_tol) {
    if (!(step > 0.0)) throw Error("finite_diff_check requires a positive step");

    RenderOutput base = render(scene, cam, opts);
    GradientBuffer analytic = backward(scene, cam, base, loss_grad(base), opts);

    FiniteDiffReport report;
    auto check = [&](FiniteDiffGroup& g, double a, double fd) {
        const double abs_err = std::abs(a - fd);
        const double denom = std::max(std::abs(a), std::abs(fd));
        const double rel = denom > 0.0 ? abs_err / denom : 0.0;
        ++g.checked;
        g.max_abs_err = std::max(g.max_abs_err, abs_err);
        if (!(abs_err < abs_tol)) g.max_rel_err = std::max(g.max_rel_err, rel);
        if (!(abs_err < abs_tol) && !(rel < rel_tol)) ++g.violations;
    };
    auto fd_eval = [&](GaussianScene& s, CameraModel& c) {
        return loss(render(s, c, opts));
    };

    const size_t P = scene.primitives.size();
    FiniteDiffGroup g_pos{"position"}, g_rot{"rotation"}, g_scale{"scale"},
        g_op{"opacity"}, g_sh{"sh"}, g_ct{"cam_translation"}, g_cr{"cam_rotation"};

    GaussianScene work = scene;
    CameraModel wcam = cam;
    auto central = [&](auto&& set, double base_value) {
        set(base_value + step);
        const double hi = fd_eval(work, wcam);
        set(base_value - step);
        const double lo = fd_eval(work, wcam);
        set(base_value);
        return (hi - lo) / (2.0 * step);
    };

    for (size_t i = 0; i < P; ++i) {
        for (int k = 0; k < 3; ++k) {
            const double fd = central(
                [&](double v) { work.primitives[i].position[k] = v; },
                scene.primitives[i].position[k]);
            check(g_pos, analytic.d_position[i][k], fd);
        }
        for (int k = 0; k < 4; ++k) {
            const Vec4 q0 = scene.primitives[i].rotation;
            auto set = [&](double v) {
                Vec4 q = q0;
                q[k] = v;
                work.primitives[i].rotation = quat_normalized(q);
            };
            const double fd = central(set, q0[k]);
            check(g_rot, analytic.d_rotation[i][k], fd);
        }
        for (int k = 0; k < 2; ++k) {
            const double fd = central([&](double v) { work.primitives[i].scale[k] = v; },
                                      scene.primitives[i].scale[k]);
            check(g_scale, analytic.d_scale[i][k], fd);
        }
        {
            const double fd = central([&](double v) { work.primitives[i].opacity = v; },
                                      scene.primitives[i].opacity);
            check(g_op, analytic.d_opacity[i], fd);
        }
        for (int k = 0; k < 48; ++k) {
            const double fd = central([&](double v) { work.primitives[i].sh[k] = v; },
                                      scene.primitives[i].sh[k]);
            check(g_sh, analytic.d_sh[i][k], fd);
        }
    }
    for (int k = 0; k < 3; ++k) {
        const double fd =
            central([&](double v) { wcam.translation[k] = v; }, cam.translation[k]);
        check(g_ct, analytic.d_cam_translation[k], fd);
    }
    for (int k = 0; k < 4; ++k) {
        const Vec4 q0 = cam.rotation;
        auto set = [&](double v) {
            Vec4 q = q0;
            q[k] = v;
            wcam.rotation = quat_normalized(q);
        };
        const double fd = central(set, q0[k]);
        check(g_cr, analytic.d_cam_rotation[k], fd);
    }

    report.groups = {g_pos, g_rot, g_scale, g_op, g_sh, g_ct, g_cr};
    return report;
}

}  // namespace splat
