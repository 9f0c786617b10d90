#include "splat/core.hpp"

#include <cmath>

namespace splat {

GaussianPrimitive2D validate_primitive(const GaussianPrimitive2D& p) {
    GaussianPrimitive2D out = p;
    if (!all_finite(p.position) || !all_finite(p.rotation) || !all_finite(p.scale) ||
        !std::isfinite(p.opacity))
        throw NonFiniteError("primitive has non-finite fields");
    for (double v : p.sh)
        if (!std::isfinite(v)) throw NonFiniteError("primitive has non-finite sh");
    if (!(p.scale[0] > 0.0) || !(p.scale[1] > 0.0))
        throw NonPositiveScaleError("primitive scale must be positive");
    out.rotation = quat_normalized(p.rotation);
    out.opacity = std::clamp(p.opacity, 0.0, 1.0);
    return out;
}

namespace {
// Real SH constants, degree 0..3.
constexpr double kSH0 = 0.28209479177387814;
constexpr double kSH1 = 0.4886025119029199;
constexpr double kSH2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kSH3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                            0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};
}  // namespace

std::array<double, 16> sh_basis(const Vec3& d) {
    const double x = d[0], y = d[1], z = d[2];
    const double xx = x * x, yy = y * y, zz = z * z;
    std::array<double, 16> b;
    b[0] = kSH0;
    b[1] = -kSH1 * y;
    b[2] = kSH1 * z;
    b[3] = -kSH1 * x;
    b[4] = kSH2[0] * x * y;
    b[5] = kSH2[1] * y * z;
    b[6] = kSH2[2] * (2.0 * zz - xx - yy);
    b[7] = kSH2[3] * x * z;
    b[8] = kSH2[4] * (xx - yy);
    b[9] = kSH3[0] * y * (3.0 * xx - yy);
    b[10] = kSH3[1] * x * y * z;
    b[11] = kSH3[2] * y * (4.0 * zz - xx - yy);
    b[12] = kSH3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = kSH3[4] * x * (4.0 * zz - xx - yy);
    b[14] = kSH3[5] * z * (xx - yy);
    b[15] = kSH3[6] * x * (xx - 3.0 * yy);
    return b;
}

void sh_basis_with_grad(const Vec3& d, std::array<double, 16>& b, std::array<Vec3, 16>& g) {
    const double x = d[0], y = d[1], z = d[2];
    const double xx = x * x, yy = y * y, zz = z * z;
    b = sh_basis(d);
    g[0] = Vec3::Zero();
    g[1] = Vec3(0, -kSH1, 0);
    g[2] = Vec3(0, 0, kSH1);
    g[3] = Vec3(-kSH1, 0, 0);
    g[4] = kSH2[0] * Vec3(y, x, 0);
    g[5] = kSH2[1] * Vec3(0, z, y);
    g[6] = kSH2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
    g[7] = kSH2[3] * Vec3(z, 0, x);
    g[8] = kSH2[4] * Vec3(2.0 * x, -2.0 * y, 0);
    g[9] = kSH3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0);
    g[10] = kSH3[1] * Vec3(y * z, x * z, x * y);
    g[11] = kSH3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    g[12] = kSH3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    g[13] = kSH3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    g[14] = kSH3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
    g[15] = kSH3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0);
}

Vec3 sh_to_rgb(const std::array<double, 48>& sh, const Vec3& view_dir) {
    const auto b = sh_basis(view_dir);
    Vec3 rgb;
    for (int ch = 0; ch < 3; ++ch) {
        double v = 0.5;
        for (int k = 0; k < 16; ++k) v += sh[ch * 16 + k] * b[k];
        rgb[ch] = std::clamp(v, 0.0, 1.0);
    }
    return rgb;
}

TangentFrame tangent_frame(const GaussianPrimitive2D& p) {
    TangentFrame f;
    const Vec3 eu = quat_rotate(p.rotation, Vec3::UnitX());
    const Vec3 ev = quat_rotate(p.rotation, Vec3::UnitY());
    f.t_u = p.scale[0] * eu;
    f.t_v = p.scale[1] * ev;
    f.n = eu.cross(ev).normalized();
    return f;
}

double scene_extent(const GaussianScene& s) {
    if (s.primitives.empty()) return 0.0;
    Vec3 lo = s.primitives[0].position, hi = lo;
    for (const auto& p : s.primitives) {
        lo = lo.cwiseMin(p.position);
        hi = hi.cwiseMax(p.position);
    }
    return (hi - lo).norm();
}

}  // namespace splat
