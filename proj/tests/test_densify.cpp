#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "splat/densify.hpp"
#include "splat/eval.hpp"
#include "splat/synth.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include "test_util.hpp"

#include <algorithm>
#include <numeric>
#include <set>

using namespace splat;
using namespace testutil;

namespace {

constexpr double kSH0 = 0.28209479177387814;

ViewBundle simple_view(int size, double focal, const Vec3& rgb, double depth_value) {
    ViewBundle v;
    v.camera.width = v.camera.height = size;
    v.camera.focal = focal;
    v.camera.principal = Vec2((size - 1) * 0.5, (size - 1) * 0.5);
    v.image = ImageD(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) v.image.at(y, x, c) = rgb[c];
    v.mono_depth = ImageD(size, size, 1, depth_value);
    return v;
}

}  // namespace

TEST_CASE("backproject: 2x2 constant-depth image unprojects by hand") {
    ViewBundle v = simple_view(2, 1.0, Vec3(0.2, 0.4, 0.6), 1.0);
    v.camera.principal = Vec2(0.5, 0.5);
    const GaussianScene s = backproject({v});
    REQUIRE(s.size() == 4);
    // Pixel (x, y) unprojects to ((x-0.5)/1, (y-0.5)/1, 1) * depth.
    const std::set<std::pair<double, double>> expect = {
        {-0.5, -0.5}, {0.5, -0.5}, {-0.5, 0.5}, {0.5, 0.5}};
    std::set<std::pair<double, double>> got;
    for (const auto& p : s.primitives) {
        CHECK(p.position[2] == doctest::Approx(1.0).epsilon(1e-12));
        got.insert({std::round(p.position[0] * 1e9) / 1e9, std::round(p.position[1] * 1e9) / 1e9});
    }
    CHECK(got == expect);
}

TEST_CASE("backproject skips masked-out pixels") {
    ViewBundle v = simple_view(4, 4.0, Vec3(1, 0, 0), 2.0);
    v.mask = ImageB(4, 4, 1, 1);
    v.mask->at(1, 2) = 0;
    v.mask->at(3, 0) = 0;
    const GaussianScene s = backproject({v});
    CHECK(s.size() == 14);
}

TEST_CASE("backproject encodes pixel color in the SH DC band only") {
    ViewBundle v = simple_view(3, 3.0, Vec3(1, 0, 0), 1.5);
    const GaussianScene s = backproject({v});
    REQUIRE(!s.primitives.empty());
    for (const auto& p : s.primitives) {
        const Vec3 c = sh_to_rgb(p.sh, Vec3(0, 0, 1));
        CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(c[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
        CHECK(c[2] == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
        for (int ch = 0; ch < 3; ++ch)
            for (int k = 1; k < 16; ++k) CHECK(p.sh_at(ch, k) == 0.0);
        CHECK(p.opacity == doctest::Approx(0.9));
    }
}

TEST_CASE("backproject without any depth source throws") {
    ViewBundle v = simple_view(2, 1.0, Vec3(1, 1, 1), 1.0);
    v.mono_depth.reset();
    CHECK_THROWS_AS(backproject({v}), NoDepthError);
}

TEST_CASE("normalize/denormalize round trip on random scenes") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        const GaussianScene s = random_scene(20, 5000 + seed);
        SceneNormalization params;
        const GaussianScene n = normalize_scene(s, params);
        double max_norm = 0.0;
        for (const auto& p : n.primitives)
            max_norm = std::max(max_norm, (p.position).cwiseAbs().maxCoeff());
        CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-12));
        const GaussianScene back = denormalize_scene(n, params);
        for (size_t i = 0; i < s.size(); ++i) {
            CHECK((back.primitives[i].position - s.primitives[i].position).norm() < 1e-9);
            CHECK((back.primitives[i].scale - s.primitives[i].scale).norm() < 1e-9);
        }
    }
}

TEST_CASE("normalize_scene: hand-checked extent") {
    GaussianScene s;
    for (double sign : {-1.0, 1.0}) {
        GaussianPrimitive2D p;
        p.position = Vec3(2 * sign, 2 * sign, 2 * sign);
        s.primitives.push_back(p);
    }
    GaussianPrimitive2D mid;  // centroid stays at the origin
    mid.position = Vec3(0, 0, 0);
    s.primitives.push_back(mid);
    SceneNormalization params;
    const GaussianScene n = normalize_scene(s, params);
    CHECK(params.scale == doctest::Approx(2.0).epsilon(1e-12));
    for (const auto& p : n.primitives) {
        CHECK(p.position.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    }
}

TEST_CASE("normalize_scene rejects zero-extent scenes") {
    GaussianScene s;
    GaussianPrimitive2D p;
    p.position = Vec3(1, 2, 3);
    s.primitives = {p, p, p};
    SceneNormalization params;
    CHECK_THROWS_AS(normalize_scene(s, params), DegenerateExtentError);
}

TEST_CASE("knn_partition covers every index exactly once") {
    const GaussianScene s = random_scene(4096, 12);
    const PatchSet ps = knn_partition(s, 2048, 7);
    CHECK(ps.patches.size() >= 2);
    CHECK(ps.patches.size() <= 3);
    std::vector<int> seen(s.size(), 0);
    for (const auto& patch : ps.patches) {
        CHECK(patch.size() <= 2048u);
        for (int32_t idx : patch) seen[idx] += 1;
    }
    for (int c : seen) CHECK(c == 1);
}

TEST_CASE("knn_partition: undersized input forms one patch") {
    const GaussianScene s = random_scene(10, 3);
    const PatchSet ps = knn_partition(s, 2048, 0);
    REQUIRE(ps.patches.size() == 1);
    CHECK(ps.patches[0].size() == 10u);
}

TEST_CASE("knn_partition is deterministic for a fixed seed") {
    const GaussianScene s = random_scene(500, 88);
    const PatchSet a = knn_partition(s, 64, 123);
    const PatchSet b = knn_partition(s, 64, 123);
    REQUIRE(a.patches.size() == b.patches.size());
    for (size_t i = 0; i < a.patches.size(); ++i) CHECK(a.patches[i] == b.patches[i]);
}

TEST_CASE("self_split: analytic densifier K=2, hand-checked children") {
    GaussianScene s;
    GaussianPrimitive2D p;
    p.position = Vec3(0.1, 0.2, 1.0);
    p.rotation = quat_from_axis_angle(Vec3(0, 0, 1), 0.7);
    p.scale = Vec2(0.4, 0.2);
    p.opacity = 0.6;
    p.sh_at(1, 0) = 0.3;
    s.primitives = {p};
    const AnalyticDensifier d;
    const auto children = self_split({0}, s, d, 2);
    REQUIRE(children.size() == 2);
    const TangentFrame f = tangent_frame(p);
    const Vec3 expect0 = p.position + 0.5 * f.t_u;
    const Vec3 expect1 = p.position - 0.5 * f.t_u;
    CHECK((children[0].position - expect0).norm() < 1e-12);
    CHECK((children[1].position - expect1).norm() < 1e-12);
    for (const auto& c : children) {
        CHECK((c.scale - 0.5 * p.scale).norm() < 1e-12);
        CHECK((c.rotation - p.rotation).norm() < 1e-12);
        CHECK(c.opacity == doctest::Approx(p.opacity).epsilon(1e-12));
        CHECK(c.sh_at(1, 0) == doctest::Approx(0.3).epsilon(1e-12));
    }
}

TEST_CASE("self_split: zero-delta densifier copies parents") {
    const GaussianScene s = random_scene(5, 9);
    std::vector<int32_t> patch(5);
    std::iota(patch.begin(), patch.end(), 0);
    const ZeroDensifier d;
    const auto children = self_split(patch, s, d, 3);
    REQUIRE(children.size() == 15u);
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 3; ++k) {
            const auto& c = children[i * 3 + k];
            CHECK((c.position - s.primitives[i].position).norm() == 0.0);
            CHECK(c.opacity == s.primitives[i].opacity);
        }
}

TEST_CASE("self_split rejects deltas that break validation") {
    struct BadDensifier : Densifier {
        std::vector<ChildDelta> split(const GaussianPrimitive2D& parent,
                                      const std::vector<int32_t>&, const GaussianScene&,
                                      int K) const override {
            std::vector<ChildDelta> out(K);
            out[0].d_scale = Vec2(-2.0 * parent.scale[0], 0.0);  // child scale <= 0
            return out;
        }
    };
    const GaussianScene s = random_scene(3, 2);
    CHECK_THROWS_AS(self_split({0, 1, 2}, s, BadDensifier{}, 2), InvalidDeltaError);
}

TEST_CASE("densify_scene count law P(1+K)") {
    const GaussianScene s = random_scene(100, 17);
    DensifyConfig cfg;
    cfg.K = 2;
    cfg.patch_size = 32;
    const GaussianScene out = densify_scene(s, cfg);
    CHECK(out.size() == 300u);
    for (const auto& p : out.primitives) CHECK_NOTHROW(validate_primitive(p));
}

TEST_CASE("densify_scene zero-delta matches the analytic double-blend") {
    // One splat duplicated in place: blending two coincident splats of
    // per-pixel alpha a gives effective alpha 2a - a^2 with the same color.
    GaussianScene s;
    GaussianPrimitive2D p;
    p.position = Vec3(0.0, 0.0, 1.2);
    p.scale = Vec2(0.3, 0.3);
    p.opacity = 0.7;
    for (int c = 0; c < 3; ++c) p.sh_at(c, 0) = (0.8 - 0.5) / kSH0;
    s.primitives = {p};

    const ZeroDensifier zd;
    DensifyConfig cfg;
    cfg.K = 1;
    cfg.densifier = &zd;
    // Normalization needs spatial extent; add a far-away helper splat that
    // never projects into the camera.
    GaussianPrimitive2D helper = p;
    helper.position = Vec3(0, 0, -50.0);
    s.primitives.push_back(helper);

    const GaussianScene dense = densify_scene(s, cfg);
    CHECK(dense.size() == 4u);

    const CameraModel cam = make_camera(32, 32, 40.0);
    const RenderOutput base = render(s, cam);
    const RenderOutput doubled = render(dense, cam);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const double a = base.alpha.at(y, x);
            const double expect_alpha = 2.0 * a - a * a;
            CHECK(doubled.alpha.at(y, x) ==
                  doctest::Approx(expect_alpha).epsilon(1e-9).scale(1.0));
            CHECK(doubled.color.at(y, x, 0) ==
                  doctest::Approx(0.8 * expect_alpha).epsilon(1e-9).scale(1.0));
        }
}

TEST_CASE("prune_by_contribution removes exactly floor(fraction * P)") {
    const GaussianScene s = random_scene(100, 55);
    const std::vector<CameraModel> cams = {make_camera(32, 32, 40.0)};
    const GaussianScene out = prune_by_contribution(s, cams, 0.05);
    CHECK(out.size() == 95u);
}

TEST_CASE("prune_by_contribution: fraction 0 with healthy opacities is a no-op") {
    const GaussianScene s = random_scene(20, 56);
    const std::vector<CameraModel> cams = {make_camera(32, 32, 40.0)};
    const GaussianScene out = prune_by_contribution(s, cams, 0.0);
    REQUIRE(out.size() == 20u);
    for (size_t i = 0; i < 20; ++i)
        CHECK((out.primitives[i].position - s.primitives[i].position).norm() == 0.0);
}

TEST_CASE("prune_by_contribution: opacity floor removals are unioned in") {
    GaussianScene s = random_scene(20, 57);
    s.primitives[7].opacity = 0.001;  // below the 0.005 floor
    const std::vector<CameraModel> cams = {make_camera(32, 32, 40.0)};
    const GaussianScene out = prune_by_contribution(s, cams, 0.0);
    CHECK(out.size() == 19u);
}

TEST_CASE("prune_by_contribution drops the occluded splat") {
    GaussianScene s = random_scene(19, 58, [] {
        SceneParams sp;
        sp.xy = 0.2;  // keep every visible splat comfortably inside the frustum
        sp.z_lo = 0.9;
        sp.z_hi = 1.2;
        return sp;
    }());
    // A fully occluded splat far behind an implicit wall of the others: put it
    // behind an opaque full-frame blocker.
    GaussianPrimitive2D wall;
    wall.position = Vec3(0, 0, 2.0);
    wall.scale = Vec2(1000, 1000);
    wall.opacity = 1.0;
    GaussianPrimitive2D hidden;
    hidden.position = Vec3(0, 0, 3.0);
    hidden.scale = Vec2(0.2, 0.2);
    hidden.opacity = 0.9;
    s.primitives.push_back(wall);
    s.primitives.push_back(hidden);  // index 20
    const std::vector<CameraModel> cams = {make_camera(32, 32, 40.0)};
    std::vector<int32_t> kept;
    const GaussianScene out = prune_by_contribution(s, cams, 0.05, 0.005, {}, &kept);
    CHECK(out.size() == 20u);
    CHECK(std::find(kept.begin(), kept.end(), 20) == kept.end());
}

TEST_CASE("pruned set is the argmin of the brute-force contribution oracle") {
    const GaussianScene s = random_scene(50, 59);
    std::vector<CameraModel> cams;
    for (int k = 0; k < 2; ++k) {
        CameraModel cam = make_camera(32, 32, 40.0);
        cam.translation = Vec3(0.04 * k, 0.0, 0.0);
        cams.push_back(cam);
    }
    const auto contrib = brute_force_contributions(s, cams);
    std::vector<int32_t> order(50);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (contrib[a] != contrib[b]) return contrib[a] < contrib[b];
        return a < b;
    });
    const std::set<int32_t> expect_removed(order.begin(), order.begin() + 5);

    std::vector<int32_t> kept;
    prune_by_contribution(s, cams, 0.1, 0.005, {}, &kept);
    std::set<int32_t> removed;
    for (int32_t i = 0; i < 50; ++i)
        if (std::find(kept.begin(), kept.end(), i) == kept.end()) removed.insert(i);
    CHECK(removed == expect_removed);
}

TEST_CASE("prune_by_contribution refuses to remove everything") {
    GaussianScene s = random_scene(3, 60);
    for (auto& p : s.primitives) p.opacity = 0.0001;
    const std::vector<CameraModel> cams = {make_camera(16, 16, 20.0)};
    CHECK_THROWS_AS(prune_by_contribution(s, cams, 0.0), EmptyAfterPruneError);
}

TEST_CASE("align_mono_depth rescales to the metric median ratio") {
    ImageD mono(4, 4, 1);
    ImageD metric(4, 4, 1);
    for (int i = 0; i < 16; ++i) {
        metric.data[i] = 1.0 + 0.1 * i;
        mono.data[i] = 2.0 * metric.data[i];  // relative depth, double scale
    }
    const double scale = align_mono_depth(mono, &metric, nullptr);
    CHECK(scale == doctest::Approx(0.5).epsilon(1e-12));
    for (int i = 0; i < 16; ++i)
        CHECK(mono.data[i] == doctest::Approx(metric.data[i]).epsilon(1e-12));
}

// ---- register_views_by_depth ------------------------------------------------

namespace {
Eigen::Quaterniond to_quat(const Vec4& q) {
    return Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
}
}  // namespace

TEST_CASE("register_views_by_depth recovers perturbed poses on a room interior") {
    SynthSpec sp;
    sp.shape = SynthShape::box_room;
    sp.grid = 12;
    sp.image_size = 64;
    sp.n_views = 3;
    sp.noise.pose_rot_deg = 2.0;
    sp.noise.pose_trans_frac = 0.02;
    sp.seed = 77;
    const SynthResult s = synth_scene(sp);

    // The perturbation is real: every view starts 2 degrees off.
    for (int i = 0; i < 3; ++i) {
        const Eigen::Quaterniond err = to_quat(s.views[i].camera.rotation) *
                                       to_quat(s.gt_cameras[i].rotation).conjugate();
        CHECK(Eigen::AngleAxisd(err).angle() * 180.0 / M_PI == doctest::Approx(2.0).epsilon(1e-6));
    }

    const std::vector<CameraModel> reg = register_views_by_depth(s.views, 0, 10, 2);
    // Depth registration can only make the views mutually consistent (the
    // reference keeps its own error as gauge), so compare gauge-invariant
    // relative rotations against the ground-truth poses (the oracle).
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            const Eigen::Quaterniond rel =
                to_quat(reg[i].rotation) * to_quat(reg[j].rotation).conjugate();
            const Eigen::Quaterniond gt_rel = to_quat(s.gt_cameras[i].rotation) *
                                              to_quat(s.gt_cameras[j].rotation).conjugate();
            const double err_deg =
                Eigen::AngleAxisd(rel * gt_rel.conjugate()).angle() * 180.0 / M_PI;
            CHECK(err_deg < 0.05);
        }
}

TEST_CASE("register_views_by_depth recovers relative rotations on a plane") {
    SynthSpec sp;
    sp.shape = SynthShape::plane;
    sp.grid = 12;
    sp.image_size = 64;
    sp.n_views = 3;
    sp.noise.pose_rot_deg = 2.0;
    sp.noise.pose_trans_frac = 0.02;
    sp.seed = 78;
    const SynthResult s = synth_scene(sp);

    const std::vector<CameraModel> reg = register_views_by_depth(s.views, 0, 10, 2);

    // The oracle normal of the planar ground-truth surface, from the
    // covariance of the splat centers.
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    Vec3 mean = Vec3::Zero();
    for (const auto& p : s.gt_scene.primitives) mean += p.position;
    mean /= static_cast<double>(s.gt_scene.primitives.size());
    for (const auto& p : s.gt_scene.primitives) {
        const Vec3 d = p.position - mean;
        cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Vec3 normal = es.eigenvectors().col(0);  // smallest spread

    // Rotation about the plane normal is unobservable from a planar depth
    // map and is deliberately left alone; the out-of-plane component of the
    // relative rotation error must be gone.
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            const Eigen::Quaterniond rel =
                to_quat(reg[i].rotation) * to_quat(reg[j].rotation).conjugate();
            const Eigen::Quaterniond gt_rel = to_quat(s.gt_cameras[i].rotation) *
                                              to_quat(s.gt_cameras[j].rotation).conjugate();
            const Eigen::AngleAxisd err(rel * gt_rel.conjugate());
            const Vec3 rotvec = err.angle() * err.axis();
            const double out_of_plane_deg =
                (rotvec - rotvec.dot(normal) * normal).norm() * 180.0 / M_PI;
            // Well below the 2-degree start; the floor is depth-map
            // quantization at this resolution, not the solver.
            CHECK(out_of_plane_deg < 0.5);
        }
}

TEST_CASE("register_views_by_depth leaves already-correct poses in place") {
    SynthSpec sp;
    sp.shape = SynthShape::box_room;
    sp.grid = 12;
    sp.image_size = 64;
    sp.n_views = 3;
    sp.seed = 79;  // no noise
    const SynthResult s = synth_scene(sp);
    const std::vector<CameraModel> reg = register_views_by_depth(s.views, 0, 10, 2);
    const AteResult after = ate_rmse(reg, s.gt_cameras);
    CHECK(after.rotation_rmse_deg < 0.05);
    CHECK(after.translation_rmse < 1e-3);
}

TEST_CASE("register_views_by_depth rejects bad input") {
    SynthSpec sp;
    sp.shape = SynthShape::plane;
    sp.grid = 8;
    sp.image_size = 32;
    sp.n_views = 2;
    sp.seed = 80;
    SynthResult s = synth_scene(sp);
    CHECK_THROWS_AS(register_views_by_depth(s.views, -1, 5, 2), DegenerateConfigurationError);
    CHECK_THROWS_AS(register_views_by_depth(s.views, 5, 5, 2), DegenerateConfigurationError);
    CHECK_THROWS_AS(register_views_by_depth(s.views, 0, 5, 0), DegenerateConfigurationError);
    s.views[1].mono_depth.reset();
    CHECK_THROWS_AS(register_views_by_depth(s.views, 0, 5, 2), NoDepthError);
    CHECK_THROWS_AS(register_views_by_depth({}, 0, 5, 2), EmptySceneError);
}

// ---- register_views_photometric ----------------------------------------------

TEST_CASE("register_views_photometric recovers an in-plane rotation depth cannot see") {
    SynthSpec sp;
    sp.shape = SynthShape::plane;
    sp.grid = 24;
    sp.image_size = 128;
    sp.n_views = 3;
    sp.seed = 81;  // no pose noise: the only error is the one injected below
    SynthResult s = synth_scene(sp);

    // Oracle plane normal from the ground-truth splat centers.
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    Vec3 mean = Vec3::Zero();
    for (const auto& p : s.gt_scene.primitives) mean += p.position;
    mean /= static_cast<double>(s.gt_scene.primitives.size());
    for (const auto& p : s.gt_scene.primitives) {
        const Vec3 d = p.position - mean;
        cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Vec3 normal = es.eigenvectors().col(0);

    // Rotate view 1 by exactly 2 degrees about the plane normal (through the
    // plane's centroid, so the camera keeps looking at the surface).
    SimTransform T;
    T.rotation = Eigen::AngleAxisd(2.0 * M_PI / 180.0, normal).toRotationMatrix();
    T.translation = mean - T.rotation * mean;
    s.views[1].camera = transform_camera(s.views[1].camera, T);

    const auto rel_err_deg = [&](const std::vector<CameraModel>& cams) {
        const Eigen::Quaterniond rel =
            to_quat(cams[0].rotation) * to_quat(cams[1].rotation).conjugate();
        const Eigen::Quaterniond gt_rel = to_quat(s.gt_cameras[0].rotation) *
                                          to_quat(s.gt_cameras[1].rotation).conjugate();
        return Eigen::AngleAxisd(rel * gt_rel.conjugate()).angle() * 180.0 / M_PI;
    };

    // Depth registration is blind to this motion: a plane slid or spun
    // within itself produces the identical depth map.
    const std::vector<CameraModel> by_depth = register_views_by_depth(s.views, 0, 10, 2);
    CHECK(rel_err_deg(by_depth) == doctest::Approx(2.0).epsilon(0.05));

    // The image texture does observe it.
    const std::vector<CameraModel> by_photo = register_views_photometric(s.views, 0, 10, 1);
    CHECK(rel_err_deg(by_photo) < 0.75);
}

TEST_CASE("register_views_photometric rejects bad input") {
    SynthSpec sp;
    sp.shape = SynthShape::plane;
    sp.grid = 8;
    sp.image_size = 32;
    sp.n_views = 2;
    sp.seed = 82;
    SynthResult s = synth_scene(sp);
    CHECK_THROWS_AS(register_views_photometric(s.views, -1, 5, 1), DegenerateConfigurationError);
    CHECK_THROWS_AS(register_views_photometric(s.views, 5, 5, 1), DegenerateConfigurationError);
    CHECK_THROWS_AS(register_views_photometric(s.views, 0, 5, 0), DegenerateConfigurationError);
    s.views[0].mono_depth.reset();  // only the reference needs depth
    CHECK_THROWS_AS(register_views_photometric(s.views, 0, 5, 1), NoDepthError);
    CHECK_THROWS_AS(register_views_photometric({}, 0, 5, 1), EmptySceneError);
}
