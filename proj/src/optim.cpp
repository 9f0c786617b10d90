#include "splat/optim.hpp"

#include "splat/densify.hpp"

#include <chrono>
#include <cmath>

namespace splat {

void OptimConfig::validate() const {
    if (iterations < 0) throw Error("iterations must be >= 0");
    if (prune_interval < 1) throw Error("prune_interval must be >= 1");
    if (!(prune_fraction >= 0.0 && prune_fraction < 1.0))
        throw Error("prune_fraction must be in [0,1)");
    if (downsample_initial < 1) throw Error("downsample_initial must be >= 1");
    if (pose_warmup_iters < 0) throw Error("pose_warmup_iters must be >= 0");
    if (sh_freeze_iters < 0) throw Error("sh_freeze_iters must be >= 0");
    const double rs[] = {rates.position, rates.rotation, rates.scale, rates.opacity,
                         rates.sh, rates.pose_translation, rates.pose_rotation};
    for (double r : rs)
        if (!(r >= 0.0)) throw Error("learning rates must be >= 0");
    loss.validate();
}

void AdamState::resize(size_t prims, size_t views) {
    m_pos.assign(prims, Vec3::Zero());
    v_pos.assign(prims, Vec3::Zero());
    m_rot.assign(prims, Vec4::Zero());
    v_rot.assign(prims, Vec4::Zero());
    m_scale.assign(prims, Vec2::Zero());
    v_scale.assign(prims, Vec2::Zero());
    m_op.assign(prims, 0.0);
    v_op.assign(prims, 0.0);
    m_sh.assign(prims, {});
    v_sh.assign(prims, {});
    m_cam_t.assign(views, Vec3::Zero());
    v_cam_t.assign(views, Vec3::Zero());
    m_cam_r.assign(views, Vec4::Zero());
    v_cam_r.assign(views, Vec4::Zero());
}

namespace {

// Bias-corrected Adam delta for one scalar.
inline double adam_delta(double g, double& m, double& v, double lr, const OptimConfig& c,
                         double bc1, double bc2) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    return lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
}

}  // namespace

void adam_step(GaussianScene& scene, std::vector<CameraModel>& cams,
               const GradientBuffer& g, const std::vector<Vec3>& cam_t_grads,
               const std::vector<Vec4>& cam_r_grads, AdamState& st, const OptimConfig& cfg,
               double extent, double lr_scale, double scene_lr_scale) {
    const size_t n = scene.primitives.size();
    if (g.d_position.size() != n || st.m_pos.size() != n || cam_t_grads.size() != cams.size() ||
        cam_r_grads.size() != cams.size() || st.m_cam_t.size() != cams.size())
        throw ShapeMismatchError("adam_step: gradient/state sizes disagree with parameters");

    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    const double scene_scale = scene_lr_scale >= 0.0 ? scene_lr_scale : lr_scale;
    const double lr_pos = cfg.rates.position * extent * scene_scale;
    const double lr_rot = cfg.rates.rotation * scene_scale;
    const double lr_scale_rate = cfg.rates.scale * scene_scale;
    const double lr_op = cfg.rates.opacity * scene_scale;
    const double lr_sh = cfg.rates.sh * scene_scale;
    const double lr_pose_t = cfg.rates.pose_translation * extent * lr_scale;
    const double lr_pose_r = cfg.rates.pose_rotation * lr_scale;

    for (size_t i = 0; i < n; ++i) {
        auto& p = scene.primitives[i];
        for (int k = 0; k < 3; ++k)
            p.position[k] -=
                adam_delta(g.d_position[i][k], st.m_pos[i][k], st.v_pos[i][k], lr_pos, cfg, bc1, bc2);
        for (int k = 0; k < 4; ++k)
            p.rotation[k] -= adam_delta(g.d_rotation[i][k], st.m_rot[i][k], st.v_rot[i][k],
                                        lr_rot, cfg, bc1, bc2);
        p.rotation = quat_normalized(p.rotation);
        for (int k = 0; k < 2; ++k) {
            // Log-space update keeps the scale positive.
            const double dlog = g.d_scale[i][k] * p.scale[k];
            const double delta = adam_delta(dlog, st.m_scale[i][k], st.v_scale[i][k],
                                            lr_scale_rate, cfg, bc1, bc2);
            p.scale[k] *= std::exp(-delta);  // multiplicative: exact no-op at delta 0
        }
        p.opacity -= adam_delta(g.d_opacity[i], st.m_op[i], st.v_op[i], lr_op, cfg, bc1, bc2);
        p.opacity = std::clamp(p.opacity, 0.0, 1.0);
        for (int k = 0; k < 48; ++k)
            p.sh[k] -= adam_delta(g.d_sh[i][k], st.m_sh[i][k], st.v_sh[i][k], lr_sh, cfg, bc1,
                                  bc2);
    }

    for (size_t v = 0; v < cams.size(); ++v) {
        for (int k = 0; k < 3; ++k)
            cams[v].translation[k] -= adam_delta(cam_t_grads[v][k], st.m_cam_t[v][k],
                                                 st.v_cam_t[v][k], lr_pose_t, cfg, bc1, bc2);
        for (int k = 0; k < 4; ++k)
            cams[v].rotation[k] -= adam_delta(cam_r_grads[v][k], st.m_cam_r[v][k],
                                              st.v_cam_r[v][k], lr_pose_r, cfg, bc1, bc2);
        cams[v].rotation = quat_normalized(cams[v].rotation);
    }
    scene.bump();
}

// ---- pose-at-origin streaming -------------------------------------------------

GaussianScene pose_apply_inverse(const GaussianScene& scene, const CameraModel& cam) {
    GaussianScene out;
    out.primitives.reserve(scene.primitives.size());
    for (const auto& p : scene.primitives) {
        GaussianPrimitive2D q = p;
        q.position = cam.world_to_cam(p.position);
        q.rotation = quat_normalized(quat_mul(cam.rotation, p.rotation));
        out.primitives.push_back(q);
    }
    out.normalization = scene.normalization;
    out.revision = scene.revision;
    return out;
}

CameraModel camera_at_origin(const CameraModel& cam) {
    CameraModel out = cam;
    out.translation = Vec3::Zero();
    out.rotation = Vec4(1, 0, 0, 0);
    return out;
}

// ---- optimization loop ---------------------------------------------------------

namespace {

CameraModel scale_camera(const CameraModel& cam, int ds) {
    if (ds == 1) return cam;
    CameraModel out = cam;
    out.width = cam.width / ds;
    out.height = cam.height / ds;
    out.focal = cam.focal / ds;
    // Pixel centers sit at integer coordinates, so the ds x ds box centers at
    // old coordinate ds*x + (ds-1)/2.
    const double off = (ds - 1) * 0.5;
    out.principal = (cam.principal - Vec2(off, off)) / ds;
    return out;
}

ImageD downsample_box(const ImageD& img, int ds) {
    if (ds == 1) return img;
    const int h = img.height / ds, w = img.width / ds;
    ImageD out(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int dy = 0; dy < ds; ++dy)
                    for (int dx = 0; dx < ds; ++dx)
                        acc += img.at(y * ds + dy, x * ds + dx, c);
                out.at(y, x, c) = acc / (ds * ds);
            }
    return out;
}

struct LevelView {
    ViewBundle view;
    FeatureMap features;
};

std::vector<LevelView> build_level(const std::vector<ViewBundle>& views, int ds) {
    std::vector<LevelView> out;
    out.reserve(views.size());
    for (const auto& v : views) {
        LevelView lv;
        lv.view.camera = scale_camera(v.camera, ds);
        lv.view.image = downsample_box(v.image, ds);
        if (v.mono_depth) lv.view.mono_depth = downsample_box(*v.mono_depth, ds);
        if (v.mask) {
            const ImageB& m = *v.mask;
            ImageB dm(lv.view.image.height, lv.view.image.width, 1, 1);
            for (int y = 0; y < dm.height; ++y)
                for (int x = 0; x < dm.width; ++x)
                    for (int dy = 0; dy < ds; ++dy)
                        for (int dx = 0; dx < ds; ++dx)
                            if (m.at(y * ds + dy, x * ds + dx) == 0) dm.at(y, x) = 0;
            lv.view.mask = std::move(dm);
        }
        lv.features = extract_features(lv.view.image);
        out.push_back(std::move(lv));
    }
    return out;
}

}  // namespace

OptimResult optimize(const GaussianScene& scene_in, const std::vector<ViewBundle>& views,
                     const OptimConfig& cfg) {
    cfg.validate();
    if (views.empty()) throw Error("optimize: at least one view required");
    if (scene_in.primitives.empty()) throw EmptySceneError("optimize: empty scene");

    const auto t0 = std::chrono::steady_clock::now();

    OptimResult res;
    res.scene = scene_in;
    for (const auto& v : views) res.cameras.push_back(v.camera);
    const double extent = scene_extent(res.scene);

    AdamState state;
    state.resize(res.scene.primitives.size(), views.size());

    // Precompute both resolution levels up front; the view content is fixed.
    const int ds = cfg.downsample_initial;
    const std::vector<LevelView> full = build_level(views, 1);
    const std::vector<LevelView> low = ds > 1 ? build_level(views, ds) : std::vector<LevelView>{};

    auto prune_now = [&]() {
        std::vector<int32_t> kept;
        res.scene = prune_by_contribution(res.scene, res.cameras, cfg.prune_fraction, 0.005,
                                          cfg.render, &kept);
        // Carry the Adam moments of the survivors across the prune.
        AdamState ns;
        ns.resize(kept.size(), views.size());
        ns.step = state.step;
        ns.m_cam_t = state.m_cam_t;
        ns.v_cam_t = state.v_cam_t;
        ns.m_cam_r = state.m_cam_r;
        ns.v_cam_r = state.v_cam_r;
        for (size_t i = 0; i < kept.size(); ++i) {
            const int32_t j = kept[i];
            ns.m_pos[i] = state.m_pos[j];
            ns.v_pos[i] = state.v_pos[j];
            ns.m_rot[i] = state.m_rot[j];
            ns.v_rot[i] = state.v_rot[j];
            ns.m_scale[i] = state.m_scale[j];
            ns.v_scale[i] = state.v_scale[j];
            ns.m_op[i] = state.m_op[j];
            ns.v_op[i] = state.v_op[j];
            ns.m_sh[i] = state.m_sh[j];
            ns.v_sh[i] = state.v_sh[j];
        }
        state = std::move(ns);
        res.report.counts_after_prune.push_back(res.scene.primitives.size());
    };

    if (cfg.iterations == 0) prune_now();

    int consecutive_bad = 0;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        if (iter % cfg.prune_interval == 0) prune_now();

        const bool low_res = ds > 1 && iter < cfg.downsample_switch_iter;
        const std::vector<LevelView>& level = low_res ? low : full;

        RenderOptions ro = cfg.render;
        ro.record_blend = cfg.loss.w_dist > 0.0;

        std::vector<RenderOutput> renders(views.size());
        std::vector<CameraModel> level_cams(views.size());
        for (size_t v = 0; v < views.size(); ++v) {
            level_cams[v] = res.cameras[v];
            if (low_res) level_cams[v] = scale_camera(res.cameras[v], ds);
            renders[v] = render(res.scene, level_cams[v], ro);
        }

        std::vector<ViewLossContext> ctx(views.size());
        for (size_t v = 0; v < views.size(); ++v) {
            ctx[v].rendered = &renders[v];
            ctx[v].view = &level[v].view;
            // Photometric target cameras may drift during pose optimization;
            // the loss only needs the view's pixel buffers, which are fixed.
            ctx[v].features = &level[v].features;
            for (size_t r = 0; r < views.size(); ++r)
                if (r != v) ctx[v].refs.push_back({&level[r].features, level_cams[r]});
            ctx[v].pair_seed = cfg.seed ^ (0x9e3779b97f4a7c15ull * (iter + 1) + v);
        }

        const TotalLoss tl = total_loss(ctx, cfg.loss);

        IterationRecord rec;
        rec.iteration = iter;
        rec.total = tl.value;
        rec.terms = tl.terms;
        rec.primitive_count = res.scene.primitives.size();
        res.report.iterations.push_back(rec);

        if (!std::isfinite(tl.value)) {
            if (++consecutive_bad >= 3) {
                res.report.diverged = true;
                throw DivergedLossError("optimize: loss non-finite for 3 consecutive iterations");
            }
            continue;
        }
        consecutive_bad = 0;

        GradientBuffer total;
        total.resize(res.scene.primitives.size());
        std::vector<Vec3> cam_t(views.size(), Vec3::Zero());
        std::vector<Vec4> cam_r(views.size(), Vec4::Zero());
        for (size_t v = 0; v < views.size(); ++v) {
            const GradientBuffer gb =
                backward(res.scene, level_cams[v], renders[v], tl.per_view[v], ro);
            total.add(gb);
            if (cfg.optimize_poses) {
                cam_t[v] = gb.d_cam_translation;
                cam_r[v] = gb.d_cam_rotation;
            }
        }

        // Cosine learning-rate decay toward a small floor: Adam's normalized
        // steps do not shrink near an optimum on their own, so without decay
        // the parameters random-walk instead of settling.
        const double progress =
            cfg.iterations > 1 ? static_cast<double>(iter) / (cfg.iterations - 1) : 0.0;
        constexpr double kLrFloor = 0.01;
        const double lr_scale =
            kLrFloor +
            (1.0 - kLrFloor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));

        // During the pose warmup the scene is held fixed so the views can
        // register against rigid geometry instead of deforming it.
        const double scene_lr = iter < cfg.pose_warmup_iters ? 0.0 : lr_scale;
        if (iter < cfg.sh_freeze_iters)
            for (auto& d : total.d_sh)
                for (int k = 0; k < 48; ++k)
                    if (k % 16 != 0) d[k] = 0.0;
        adam_step(res.scene, res.cameras, total, cam_t, cam_r, state, cfg, extent, lr_scale,
                  scene_lr);
    }

    res.report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace splat
