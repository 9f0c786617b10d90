#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "splat/grad.hpp"
#include "test_util.hpp"

#include <random>
#include <sstream>

using namespace splat;
using namespace testutil;

namespace {

constexpr double kSH0 = 0.28209479177387814;

GaussianPrimitive2D flat_splat(const Vec3& pos, double size, double opacity, const Vec3& rgb) {
    GaussianPrimitive2D p;
    p.position = pos;
    p.scale = Vec2(size, size);
    p.opacity = opacity;
    for (int c = 0; c < 3; ++c) p.sh_at(c, 0) = (rgb[c] - 0.5) / kSH0;
    return p;
}

std::string describe(const FiniteDiffReport& rep) {
    std::ostringstream os;
    for (const auto& g : rep.groups)
        os << g.name << ": checked=" << g.checked << " violations=" << g.violations
           << " max_abs=" << g.max_abs_err << " max_rel=" << g.max_rel_err << "\n";
    return os.str();
}

// Quadratic photometric loss against fixed targets; depth/normal terms are
// gated by a mask frozen from the unperturbed render so finite differences
// never cross the alpha>0 boundary.
struct QuadLoss {
    ImageD tc, td, tn, ta;
    ImageB mask;

    static QuadLoss against(const RenderOutput& base, uint64_t seed) {
        QuadLoss q;
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto jitter = [&](const ImageD& src) {
            ImageD t = src;
            for (auto& v : t.data) v += 0.2 * (u(rng) - 0.5);
            return t;
        };
        q.tc = jitter(base.color);
        q.td = jitter(base.depth);
        q.tn = jitter(base.normal);
        q.ta = jitter(base.alpha);
        q.mask = ImageB(base.height(), base.width(), 1);
        for (int y = 0; y < base.height(); ++y)
            for (int x = 0; x < base.width(); ++x)
                q.mask.at(y, x) = base.alpha.at(y, x) > 0.2 ? 1 : 0;
        return q;
    }

    double value(const RenderOutput& r) const {
        double L = 0.0;
        for (int y = 0; y < r.height(); ++y)
            for (int x = 0; x < r.width(); ++x) {
                for (int c = 0; c < 3; ++c) {
                    const double dc = r.color.at(y, x, c) - tc.at(y, x, c);
                    L += dc * dc;
                }
                const double da = r.alpha.at(y, x) - ta.at(y, x);
                L += da * da;
                if (!mask.at(y, x)) continue;
                const double dd = r.depth.at(y, x) - td.at(y, x);
                L += 0.3 * dd * dd;
                for (int c = 0; c < 3; ++c) {
                    const double dn = r.normal.at(y, x, c) - tn.at(y, x, c);
                    L += 0.1 * dn * dn;
                }
            }
        return L;
    }

    LossGrads grads(const RenderOutput& r) const {
        LossGrads g = LossGrads::zeros(r.height(), r.width());
        for (int y = 0; y < r.height(); ++y)
            for (int x = 0; x < r.width(); ++x) {
                for (int c = 0; c < 3; ++c)
                    g.d_color.at(y, x, c) = 2.0 * (r.color.at(y, x, c) - tc.at(y, x, c));
                g.d_alpha.at(y, x) = 2.0 * (r.alpha.at(y, x) - ta.at(y, x));
                if (!mask.at(y, x)) continue;
                g.d_depth.at(y, x) = 0.6 * (r.depth.at(y, x) - td.at(y, x));
                for (int c = 0; c < 3; ++c)
                    g.d_normal.at(y, x, c) = 0.2 * (r.normal.at(y, x, c) - tn.at(y, x, c));
            }
        return g;
    }
};

}  // namespace

TEST_CASE("backward with zero loss gradients yields zero parameter gradients") {
    const GaussianScene scene = random_scene(10, 31);
    const CameraModel cam = make_camera(24, 24, 30.0);
    const RenderOutput out = render(scene, cam);
    const GradientBuffer g = backward(scene, cam, out, LossGrads::zeros(24, 24), {});
    for (size_t i = 0; i < scene.size(); ++i) {
        CHECK(g.d_position[i].norm() == 0.0);
        CHECK(g.d_rotation[i].norm() == 0.0);
        CHECK(g.d_scale[i].norm() == 0.0);
        CHECK(g.d_opacity[i] == 0.0);
        for (double v : g.d_sh[i]) CHECK(v == 0.0);
    }
    CHECK(g.d_cam_translation.norm() == 0.0);
    CHECK(g.d_cam_rotation.norm() == 0.0);
}

TEST_CASE("opacity gradient at the splat center is the Gaussian falloff") {
    // L = alpha buffer at the center pixel; there G = 1 so dL/d(opacity) = 1.
    CameraModel cam;
    cam.width = cam.height = 101;
    cam.focal = 100.0;
    cam.principal = Vec2(50, 50);
    GaussianScene scene;
    scene.primitives.push_back(flat_splat(Vec3(0, 0, 1), 0.2, 0.5, Vec3(1, 1, 1)));
    const RenderOutput out = render(scene, cam);
    LossGrads lg = LossGrads::zeros(101, 101);
    lg.d_alpha.at(50, 50) = 1.0;
    const GradientBuffer g = backward(scene, cam, out, lg, {});
    CHECK(g.d_opacity[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("analytic backward matches central differences on random scenes") {
    const RenderOptions opts = smooth_options();
    for (uint64_t seed : {11u, 22u, 33u, 44u, 55u}) {
        SceneParams sp;
        sp.opacity_hi = 0.85;  // stay clear of the 0.999 alpha clamp
        const GaussianScene scene = random_scene(8, seed, sp);
        CameraModel cam = make_camera(16, 16, 20.0);
        cam.translation = Vec3(0.02, -0.03, 0.05);
        cam.rotation = quat_from_axis_angle(Vec3(0.3, 1.0, 0.1), 0.05);
        const QuadLoss q = QuadLoss::against(render(scene, cam, opts), seed);
        const auto rep = finite_diff_check(
            scene, cam, opts, [&](const RenderOutput& r) { return q.value(r); },
            [&](const RenderOutput& r) { return q.grads(r); }, 1e-5, 1e-6, 2e-3);
        INFO(describe(rep));
        CHECK(rep.ok());
    }
}

TEST_CASE("finite_diff_check flags corrupted gradients") {
    SceneParams sp;
    sp.opacity_hi = 0.85;
    const GaussianScene scene = random_scene(6, 321, sp);
    const CameraModel cam = make_camera(16, 16, 20.0);
    const RenderOptions opts = smooth_options();
    const QuadLoss q = QuadLoss::against(render(scene, cam, opts), 321);
    const auto rep = finite_diff_check(
        scene, cam, opts, [&](const RenderOutput& r) { return q.value(r); },
        [&](const RenderOutput& r) {
            LossGrads g = q.grads(r);
            for (auto& v : g.d_color.data) v *= 1.5;  // deliberately wrong scale
            return g;
        },
        1e-5, 1e-6, 2e-3);
    CHECK(!rep.ok());
}

TEST_CASE("finite_diff_check rejects non-positive steps") {
    const GaussianScene scene = random_scene(2, 1);
    const CameraModel cam = make_camera(8, 8, 10.0);
    auto loss = [](const RenderOutput&) { return 0.0; };
    auto grads = [](const RenderOutput& r) { return LossGrads::zeros(r.height(), r.width()); };
    CHECK_THROWS_AS(finite_diff_check(scene, cam, {}, loss, grads, 0.0), Error);
    CHECK_THROWS_AS(finite_diff_check(scene, cam, {}, loss, grads, -1e-5), Error);
}

TEST_CASE("backward is deterministic") {
    const GaussianScene scene = random_scene(30, 909);
    const CameraModel cam = make_camera(32, 32, 40.0);
    const RenderOutput out = render(scene, cam);
    const QuadLoss q = QuadLoss::against(out, 17);
    const GradientBuffer a = backward(scene, cam, out, q.grads(out), {});
    const GradientBuffer b = backward(scene, cam, out, q.grads(out), {});
    for (size_t i = 0; i < scene.size(); ++i) {
        CHECK((a.d_position[i] - b.d_position[i]).norm() == 0.0);
        CHECK((a.d_rotation[i] - b.d_rotation[i]).norm() == 0.0);
        CHECK((a.d_scale[i] - b.d_scale[i]).norm() == 0.0);
        CHECK(a.d_opacity[i] == b.d_opacity[i]);
    }
    CHECK((a.d_cam_translation - b.d_cam_translation).norm() == 0.0);
    CHECK((a.d_cam_rotation - b.d_cam_rotation).norm() == 0.0);
}

TEST_CASE("abs_accumulate hand examples") {
    auto [abs1, sum1] = abs_accumulate({Vec2(3, 4)});
    CHECK(abs1 == doctest::Approx(5.0).epsilon(1e-15));
    CHECK((sum1 - Vec2(3, 4)).norm() == 0.0);

    auto [abs2, sum2] = abs_accumulate({Vec2(1, 0), Vec2(-1, 0)});
    CHECK(abs2 == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(sum2.norm() == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("accumulated absolute screen gradient dominates the vector sum") {
    for (uint64_t seed : {3u, 5u, 8u}) {
        const GaussianScene scene = random_scene(15, seed);
        const CameraModel cam = make_camera(24, 24, 30.0);
        const RenderOutput out = render(scene, cam);
        const QuadLoss q = QuadLoss::against(out, seed);
        const GradientBuffer g = backward(scene, cam, out, q.grads(out), {});
        for (size_t i = 0; i < scene.size(); ++i)
            CHECK(g.abs_pos_grad[i] >= g.sum_pos_grad[i].norm() - 1e-12);
    }
}

TEST_CASE("pose translation gradient is consistent with the position gradient") {
    // Single splat with a flat color: the position enters only through
    // center_cam = R p + t, so dL/dt = R * dL/dp.
    GaussianScene scene;
    scene.primitives.push_back(flat_splat(Vec3(0.05, -0.1, 1.2), 0.15, 0.6, Vec3(0.8, 0.3, 0.4)));
    CameraModel cam = make_camera(24, 24, 30.0);
    cam.rotation = quat_from_axis_angle(Vec3(0.2, 0.9, -0.1), 0.1);
    cam.translation = Vec3(0.03, 0.02, -0.04);
    const RenderOutput out = render(scene, cam);
    const QuadLoss q = QuadLoss::against(out, 60);
    const GradientBuffer g = backward(scene, cam, out, q.grads(out), {});
    const Vec3 rotated = quat_rotate(cam.rotation, g.d_position[0]);
    CHECK((g.d_cam_translation - rotated).norm() <=
          1e-6 * std::max(1.0, g.d_cam_translation.norm()));
}
