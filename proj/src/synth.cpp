#include "splat/synth.hpp"

#include "splat/raster.hpp"

#include <cmath>
#include <random>

namespace splat {

SynthShape shape_from_string(const std::string& name) {
    if (name == "plane") return SynthShape::plane;
    if (name == "box-room" || name == "box_room") return SynthShape::box_room;
    if (name == "sphere") return SynthShape::sphere;
    if (name == "corner") return SynthShape::corner;
    throw Error("unknown shape: " + name);
}

std::string shape_to_string(SynthShape s) {
    switch (s) {
        case SynthShape::plane: return "plane";
        case SynthShape::box_room: return "box-room";
        case SynthShape::sphere: return "sphere";
        case SynthShape::corner: return "corner";
    }
    return "?";
}

CameraModel look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                    int width, int height) {
    const Vec3 fwd = (target - eye).normalized();
    Vec3 right = up.cross(fwd);
    if (right.norm() < 1e-9) right = Vec3::UnitX();
    right.normalize();
    const Vec3 down = fwd.cross(right);
    Mat3 r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = fwd;
    const Eigen::Quaterniond q(r);

    CameraModel cam;
    cam.focal = focal;
    cam.width = width;
    cam.height = height;
    cam.principal = Vec2((width - 1) * 0.5, (height - 1) * 0.5);
    cam.rotation = quat_normalized(Vec4(q.w(), q.x(), q.y(), q.z()));
    cam.translation = -(r * eye);
    return cam;
}

namespace {

constexpr double kSH0 = 0.28209479177387814;

// Smooth multi-frequency albedo so every surface patch carries photometric
// texture for pose and geometry recovery.
Vec3 texture_at(const Vec3& p) {
    const double a = std::sin(5.3 * p.x() + 1.1) * std::sin(4.1 * p.y() + 0.7);
    const double b = std::sin(3.7 * p.y() + 2.3) * std::sin(6.1 * p.z() + 0.2);
    const double c = std::sin(4.9 * p.z() + 0.9) * std::sin(5.7 * p.x() + 1.9);
    const double d = std::sin(11.0 * (p.x() + p.y() + p.z()));
    return Vec3(0.55 + 0.30 * a + 0.08 * d, 0.50 + 0.30 * b - 0.08 * d,
                0.55 + 0.30 * c + 0.05 * a);
}

GaussianPrimitive2D make_splat(const Vec3& pos, const Vec3& normal, double size,
                               std::mt19937_64& rng) {
    GaussianPrimitive2D p;
    p.position = pos;
    const Vec3 n = normal.normalized();
    const Vec3 ref = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 u = ref.cross(n).normalized();
    const Vec3 v = n.cross(u);
    Mat3 r;
    r.col(0) = u;
    r.col(1) = v;
    r.col(2) = n;
    const Eigen::Quaterniond q(r);
    p.rotation = quat_normalized(Vec4(q.w(), q.x(), q.y(), q.z()));
    p.scale = Vec2(size, size);
    p.opacity = 0.95;
    std::uniform_real_distribution<double> jitter(-0.06, 0.06);
    const Vec3 color = texture_at(pos);
    for (int c = 0; c < 3; ++c) {
        const double v01 = std::clamp(color[c] + jitter(rng), 0.05, 0.95);
        p.sh_at(c, 0) = (v01 - 0.5) / kSH0;
    }
    return p;
}

void add_planar_patch(GaussianScene& scene, const Vec3& origin, const Vec3& eu, const Vec3& ev,
                      const Vec3& normal, int grid, std::mt19937_64& rng) {
    const double size = 0.72 * (eu.norm() * 2.0 / grid);
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
            const double s = -1.0 + (2.0 * i + 1.0) / grid;
            const double t = -1.0 + (2.0 * j + 1.0) / grid;
            scene.primitives.push_back(make_splat(origin + s * eu + t * ev, normal, size, rng));
        }
}

struct Rig {
    std::vector<Vec3> eyes;
    Vec3 target = Vec3::Zero();
    Vec3 held_out_eye = Vec3::Zero();
    double focal_per_width = 1.2;
};

GaussianScene build_surface(const SynthSpec& spec, std::mt19937_64& rng, Rig& rig) {
    GaussianScene scene;
    const int g = spec.grid;
    switch (spec.shape) {
        case SynthShape::plane: {
            add_planar_patch(scene, Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ(),
                             g, rng);
            for (int i = 0; i < spec.n_views; ++i) {
                const double az = spec.n_views == 1
                                      ? 0.0
                                      : (-25.0 + 50.0 * i / (spec.n_views - 1)) * M_PI / 180.0;
                const double el = (i % 2 == 0 ? 8.0 : -8.0) * M_PI / 180.0;
                rig.eyes.push_back(
                    Vec3(2.4 * std::sin(az), 2.4 * std::sin(el), 2.4 * std::cos(az)));
            }
            rig.held_out_eye = Vec3(2.4 * std::sin(0.14), 2.4 * std::sin(0.12), 2.35);
            rig.focal_per_width = 1.2;
            break;
        }
        case SynthShape::box_room: {
            // Interior of a box seen from near its open front face.
            add_planar_patch(scene, Vec3(0, 0, -1), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ(),
                             g, rng);  // back wall
            add_planar_patch(scene, Vec3(-1, 0, 0), Vec3::UnitY(), Vec3(0, 0, -1), Vec3::UnitX(),
                             g, rng);  // left wall
            add_planar_patch(scene, Vec3(1, 0, 0), Vec3::UnitY(), Vec3(0, 0, -1), -Vec3::UnitX(),
                             g, rng);  // right wall
            add_planar_patch(scene, Vec3(0, 1, 0), Vec3::UnitX(), Vec3(0, 0, -1), -Vec3::UnitY(),
                             g, rng);  // floor
            add_planar_patch(scene, Vec3(0, -1, 0), Vec3::UnitX(), Vec3(0, 0, -1), Vec3::UnitY(),
                             g, rng);  // ceiling
            rig.target = Vec3(0, 0, -1);
            for (int i = 0; i < spec.n_views; ++i) {
                const double s = spec.n_views == 1
                                     ? 0.0
                                     : -1.0 + 2.0 * i / (spec.n_views - 1);
                rig.eyes.push_back(Vec3(0.45 * s, 0.18 * s, 1.25 + 0.15 * std::abs(s)));
            }
            rig.held_out_eye = Vec3(0.2, -0.12, 1.3);
            rig.focal_per_width = 0.75;
            break;
        }
        case SynthShape::sphere: {
            // Fibonacci lattice on the unit sphere.
            const int n = g * g;
            const double golden = M_PI * (3.0 - std::sqrt(5.0));
            const double size = 0.72 * std::sqrt(4.0 * M_PI / n);
            for (int i = 0; i < n; ++i) {
                const double y = 1.0 - 2.0 * (i + 0.5) / n;
                const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
                const double th = golden * i;
                const Vec3 p(r * std::cos(th), y, r * std::sin(th));
                scene.primitives.push_back(make_splat(p, p, size, rng));
            }
            for (int i = 0; i < spec.n_views; ++i) {
                const double az = spec.n_views == 1
                                      ? 0.0
                                      : (-30.0 + 60.0 * i / (spec.n_views - 1)) * M_PI / 180.0;
                rig.eyes.push_back(Vec3(3.0 * std::sin(az), 0.3, 3.0 * std::cos(az)));
            }
            rig.held_out_eye = Vec3(3.0 * std::sin(0.2), -0.25, 3.0 * std::cos(0.2));
            rig.focal_per_width = 1.1;
            break;
        }
        case SynthShape::corner: {
            // Two walls meeting at a right angle along the y axis.
            const Vec3 na = Vec3(1, 0, 1).normalized();
            const Vec3 nb = Vec3(-1, 0, 1).normalized();
            add_planar_patch(scene, Vec3(-0.7, 0, -0.7), Vec3(0.7, 0, 0.7), Vec3::UnitY(), na,
                             g, rng);
            add_planar_patch(scene, Vec3(0.7, 0, -0.7), Vec3(0.7, 0, -0.7), Vec3::UnitY(), nb,
                             g, rng);
            for (int i = 0; i < spec.n_views; ++i) {
                const double az = spec.n_views == 1
                                      ? 0.0
                                      : (-22.0 + 44.0 * i / (spec.n_views - 1)) * M_PI / 180.0;
                const double el = (i % 2 == 0 ? 6.0 : -6.0) * M_PI / 180.0;
                rig.eyes.push_back(
                    Vec3(2.6 * std::sin(az), 2.6 * std::sin(el), 2.6 * std::cos(az)));
            }
            rig.held_out_eye = Vec3(2.6 * std::sin(0.12), 0.3, 2.55);
            rig.focal_per_width = 1.1;
            break;
        }
    }
    return scene;
}

Vec3 random_unit(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        const Vec3 v(u(rng), u(rng), u(rng));
        const double n = v.norm();
        if (n > 1e-3 && n <= 1.0) return v / n;
    }
}

CameraModel perturb_pose(const CameraModel& cam, const SynthNoise& noise, double extent,
                         std::mt19937_64& rng) {
    CameraModel out = cam;
    if (noise.pose_rot_deg > 0.0) {
        const Vec4 dq = quat_from_axis_angle(random_unit(rng), noise.pose_rot_deg * M_PI / 180.0);
        out.rotation = quat_normalized(quat_mul(dq, cam.rotation));
    }
    if (noise.pose_trans_frac > 0.0) {
        const Vec3 center = cam.center() + noise.pose_trans_frac * extent * random_unit(rng);
        out.translation = -quat_rotate(out.rotation, center);
    } else {
        out.translation = -quat_rotate(out.rotation, cam.center());
    }
    return out;
}

}  // namespace

SynthResult synth_scene(const SynthSpec& spec) {
    if (spec.grid < 2 || spec.image_size < 16 || spec.n_views < 1)
        throw Error("synth_scene: degenerate spec");
    std::mt19937_64 rng(spec.seed);

    SynthResult out;
    Rig rig;
    out.gt_scene = build_surface(spec, rng, rig);
    out.gt_scene.bump();
    const double extent = scene_extent(out.gt_scene);

    const double focal = rig.focal_per_width * spec.image_size;
    const Vec3 up = Vec3::UnitY();
    for (const Vec3& eye : rig.eyes)
        out.gt_cameras.push_back(
            look_at(eye, rig.target, up, focal, spec.image_size, spec.image_size));
    const CameraModel held_cam =
        look_at(rig.held_out_eye, rig.target, up, focal, spec.image_size, spec.image_size);

    RenderOptions ro;
    std::uniform_real_distribution<double> dj(-1.0, 1.0);
    for (const CameraModel& cam : out.gt_cameras) {
        const RenderOutput r = render(out.gt_scene, cam, ro);
        ViewBundle view;
        view.camera = perturb_pose(cam, spec.noise, extent, rng);
        view.image = r.color;
        ImageB mask(spec.image_size, spec.image_size, 1, 0);
        ImageD depth(spec.image_size, spec.image_size, 1, 0.0);
        for (int y = 0; y < spec.image_size; ++y)
            for (int x = 0; x < spec.image_size; ++x) {
                if (r.alpha.at(y, x) <= 0.5) continue;
                mask.at(y, x) = 1;
                double d = spec.noise.depth_scale * r.depth.at(y, x);
                if (spec.noise.depth_jitter > 0.0) d += spec.noise.depth_jitter * dj(rng);
                depth.at(y, x) = d;
            }
        view.mask = std::move(mask);
        view.mono_depth = std::move(depth);
        out.views.push_back(std::move(view));
    }

    const RenderOutput rh = render(out.gt_scene, held_cam, ro);
    out.held_out.camera = held_cam;
    out.held_out.image = rh.color;
    ImageB hmask(spec.image_size, spec.image_size, 1, 0);
    for (int y = 0; y < spec.image_size; ++y)
        for (int x = 0; x < spec.image_size; ++x)
            if (rh.alpha.at(y, x) > 0.5) hmask.at(y, x) = 1;
    out.held_out.mask = std::move(hmask);
    return out;
}

}  // namespace splat
