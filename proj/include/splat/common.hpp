#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace splat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

// ---- error types ----------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteError : Error { using Error::Error; };
struct NonPositiveScaleError : Error { using Error::Error; };
struct DegenerateSplatError : Error { using Error::Error; };
struct EmptySceneError : Error { using Error::Error; };
struct StaleRenderError : Error { using Error::Error; };
struct NoDepthError : Error { using Error::Error; };
struct DegenerateExtentError : Error { using Error::Error; };
struct InvalidDeltaError : Error { using Error::Error; };
struct EmptyAfterPruneError : Error { using Error::Error; };
struct EmptyMaskError : Error { using Error::Error; };
struct ImageTooSmallError : Error { using Error::Error; };
struct NoValidPairsError : Error { using Error::Error; };
struct NoReferencesError : Error { using Error::Error; };
struct ShapeMismatchError : Error { using Error::Error; };
struct DivergedLossError : Error { using Error::Error; };
struct EmptyCloudError : Error { using Error::Error; };
struct DegenerateConfigurationError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct CorruptFileError : Error { using Error::Error; };
struct UnsupportedVersionError : Error { using Error::Error; };
struct DecodeError : Error { using Error::Error; };
struct ResolutionMismatchError : Error { using Error::Error; };

// ---- small image container ------------------------------------------------

template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<T> data;

    Image() = default;
    Image(int h, int w, int c, T fill = T{})
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(h) * w * c, fill) {}

    T& at(int y, int x, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    const T& at(int y, int x, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    size_t size() const { return data.size(); }
};

using ImageD = Image<double>;
using ImageB = Image<uint8_t>;

// ---- quaternion helpers ----------------------------------------------------
// Quaternions are stored (w, x, y, z), unit norm.

inline Vec3 quat_rotate(const Vec4& q, const Vec3& v) {
    const double w = q[0];
    const Vec3 u(q[1], q[2], q[3]);
    return (w * w - u.squaredNorm()) * v + 2.0 * u.dot(v) * u + 2.0 * w * u.cross(v);
}

// Backward of quat_rotate for unit q: accumulates d(loss)/dq and returns
// d(loss)/dv given upstream gradient g = d(loss)/d(q*v).
inline Vec3 quat_rotate_backward(const Vec4& q, const Vec3& v, const Vec3& g, Vec4& dq) {
    const double w = q[0];
    const Vec3 u(q[1], q[2], q[3]);
    dq[0] += g.dot(2.0 * w * v + 2.0 * u.cross(v));
    const Vec3 du = -2.0 * u * v.dot(g) + 2.0 * v * u.dot(g) + 2.0 * u.dot(v) * g +
                    2.0 * w * v.cross(g);
    dq[1] += du[0];
    dq[2] += du[1];
    dq[3] += du[2];
    return (w * w - u.squaredNorm()) * g + 2.0 * g.dot(u) * u - 2.0 * w * u.cross(g);
}

inline Mat3 quat_to_mat(const Vec4& q) {
    Mat3 m;
    for (int k = 0; k < 3; ++k) m.col(k) = quat_rotate(q, Vec3::Unit(k));
    return m;
}

// d(loss)/dq from an accumulated 3x3 gradient w.r.t. the rotation matrix.
inline void quat_mat_backward(const Vec4& q, const Mat3& dmat, Vec4& dq) {
    for (int k = 0; k < 3; ++k) quat_rotate_backward(q, Vec3::Unit(k), dmat.col(k), dq);
}

// Projects an ambient quaternion gradient onto the unit-sphere tangent at q,
// matching finite differences that renormalize after perturbation.
inline Vec4 quat_project_gradient(const Vec4& q, const Vec4& g) {
    return g - q * q.dot(g);
}

inline Vec4 quat_normalized(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NonFiniteError("quaternion has no valid norm");
    return q / n;
}

// Hamilton product (w,x,y,z).
inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
    return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

inline Vec4 quat_conjugate(const Vec4& q) { return Vec4(q[0], -q[1], -q[2], -q[3]); }

inline Vec4 quat_from_axis_angle(const Vec3& axis, double angle_rad) {
    const double n = axis.norm();
    if (n < 1e-300) return Vec4(1, 0, 0, 0);
    const double h = 0.5 * angle_rad;
    const Vec3 a = axis * (std::sin(h) / n);
    return Vec4(std::cos(h), a[0], a[1], a[2]);
}

// Geodesic angle (radians) between two unit quaternions.
inline double quat_angle(const Vec4& a, const Vec4& b) {
    double d = std::abs(a.dot(b));
    d = std::min(1.0, d);
    return 2.0 * std::acos(d);
}

template <typename T>
bool all_finite(const T& v) {
    for (int i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i])) return false;
    return true;
}

}  // namespace splat
