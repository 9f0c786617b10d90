#include "splat/losses.hpp"

#include "splat/raster.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace splat {

namespace {

constexpr double kNormEps = 1e-8;

void require_same_shape(const ImageD& a, const ImageD& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeMismatchError(std::string(what) + ": shape mismatch");
}

std::vector<double> gaussian_kernel(int radius, double sigma) {
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable cross-correlation of a single channel; the kernels used here are
// symmetric, so this equals convolution.
ImageD conv_separable(const ImageD& src, int channel, const std::vector<double>& k,
                      bool replicate) {
    const int r = static_cast<int>(k.size() / 2);
    const int h = src.height, w = src.width;
    ImageD tmp(h, w, 1), out(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                int xx = x + i;
                if (replicate)
                    xx = std::clamp(xx, 0, w - 1);
                else if (xx < 0 || xx >= w)
                    continue;
                acc += k[i + r] * src.at(y, xx, channel);
            }
            tmp.at(y, x) = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                int yy = y + i;
                if (replicate)
                    yy = std::clamp(yy, 0, h - 1);
                else if (yy < 0 || yy >= h)
                    continue;
                acc += k[i + r] * tmp.at(yy, x);
            }
            out.at(y, x) = acc;
        }
    return out;
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

void LossWeights::validate() const {
    const double ws[] = {w_l1, w_ssim, w_rank, w_smooth, w_mvs, w_normal, w_dist,
                         margin, n1, n2};
    for (double v : ws)
        if (!(v >= 0.0) || !std::isfinite(v)) throw Error("loss weights must be finite and >= 0");
    if (patch_radius < 1 || sample_count < 1)
        throw Error("patch_radius and sample_count must be positive");
}

// ---- photometric ------------------------------------------------------------

ScalarLoss loss_l1(const ImageD& rendered, const ImageD& target, const ImageB* mask) {
    require_same_shape(rendered, target, "loss_l1");
    ScalarLoss out;
    out.grads = LossGrads::zeros(rendered.height, rendered.width);
    int64_t n = 0;
    double sum = 0.0;
    for (int y = 0; y < rendered.height; ++y)
        for (int x = 0; x < rendered.width; ++x) {
            if (mask && mask->at(y, x) == 0) continue;
            for (int c = 0; c < rendered.channels; ++c) {
                sum += std::abs(rendered.at(y, x, c) - target.at(y, x, c));
                ++n;
            }
        }
    if (n == 0) throw EmptyMaskError("loss_l1: no valid pixels");
    out.value = sum / n;
    out.valid_count = n;
    const double inv = 1.0 / n;
    for (int y = 0; y < rendered.height; ++y)
        for (int x = 0; x < rendered.width; ++x) {
            if (mask && mask->at(y, x) == 0) continue;
            for (int c = 0; c < rendered.channels; ++c)
                out.grads.d_color.at(y, x, c) =
                    sgn(rendered.at(y, x, c) - target.at(y, x, c)) * inv;
        }
    return out;
}

double ssim_mean(const ImageD& a, const ImageD& b, const ImageB* mask, ImageD* d_a) {
    require_same_shape(a, b, "ssim");
    constexpr int kRadius = 5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    if (a.height < 2 * kRadius + 1 || a.width < 2 * kRadius + 1)
        throw ImageTooSmallError("ssim: image smaller than the 11x11 window");
    const auto kernel = gaussian_kernel(kRadius, 1.5);
    const int h = a.height, w = a.width, ch = a.channels;

    if (d_a) *d_a = ImageD(h, w, ch, 0.0);

    double total = 0.0;
    int64_t count = 0;
    // First pass to learn the normalizer, second to scatter gradients.
    std::vector<ImageD> f_mu(ch), f_x2(ch), f_xy(ch);

    for (int c = 0; c < ch; ++c) {
        ImageD x2(h, w, 1), xy(h, w, 1), y2(h, w, 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double xv = a.at(y, x, c), yv = b.at(y, x, c);
                x2.at(y, x) = xv * xv;
                xy.at(y, x) = xv * yv;
                y2.at(y, x) = yv * yv;
            }
        const ImageD mx = conv_separable(a, c, kernel, false);
        const ImageD my = conv_separable(b, c, kernel, false);
        const ImageD ex2 = conv_separable(x2, 0, kernel, false);
        const ImageD exy = conv_separable(xy, 0, kernel, false);
        const ImageD ey2 = conv_separable(y2, 0, kernel, false);

        f_mu[c] = ImageD(h, w, 1);
        f_x2[c] = ImageD(h, w, 1);
        f_xy[c] = ImageD(h, w, 1);

        for (int y = kRadius; y < h - kRadius; ++y)
            for (int x = kRadius; x < w - kRadius; ++x) {
                if (mask && mask->at(y, x) == 0) continue;
                const double ux = mx.at(y, x), uy = my.at(y, x);
                const double sx = ex2.at(y, x) - ux * ux;
                const double sy = ey2.at(y, x) - uy * uy;
                const double sxy = exy.at(y, x) - ux * uy;
                const double n1 = 2.0 * ux * uy + kC1;
                const double n2 = 2.0 * sxy + kC2;
                const double d1 = ux * ux + uy * uy + kC1;
                const double d2 = sx + sy + kC2;
                const double s = (n1 * n2) / (d1 * d2);
                total += s;
                ++count;
                if (!d_a) continue;
                const double fx2 = -s / d2;                // dS/d(sigma_x^2)
                const double fxy = 2.0 * n1 / (d1 * d2);   // dS/d(sigma_xy)
                const double fmu = 2.0 * uy * n2 / (d1 * d2) - 2.0 * ux * s / d1 -
                                   2.0 * ux * fx2 - uy * fxy;
                f_mu[c].at(y, x) = fmu;
                f_x2[c].at(y, x) = fx2;
                f_xy[c].at(y, x) = fxy;
            }
    }
    if (count == 0) throw EmptyMaskError("ssim: no valid window centers");
    if (d_a) {
        const double inv = 1.0 / count;
        for (int c = 0; c < ch; ++c) {
            // The window is symmetric, so scattering via a second correlation
            // of the per-center factors is exact.
            const ImageD gmu = conv_separable(f_mu[c], 0, kernel, false);
            const ImageD gx2 = conv_separable(f_x2[c], 0, kernel, false);
            const ImageD gxy = conv_separable(f_xy[c], 0, kernel, false);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    d_a->at(y, x, c) = inv * (gmu.at(y, x) +
                                              2.0 * a.at(y, x, c) * gx2.at(y, x) +
                                              b.at(y, x, c) * gxy.at(y, x));
        }
    }
    return total / count;
}

ScalarLoss loss_ssim(const ImageD& rendered, const ImageD& target, const ImageB* mask) {
    ScalarLoss out;
    out.grads = LossGrads::zeros(rendered.height, rendered.width);
    ImageD d_a;
    out.value = 1.0 - ssim_mean(rendered, target, mask, &d_a);
    for (size_t i = 0; i < d_a.data.size(); ++i) out.grads.d_color.data[i] = -d_a.data[i];
    return out;
}

// ---- sampled depth pairs ----------------------------------------------------

namespace {

struct PixelPair {
    int x1, y1, x2, y2;
};

// Draws the fixed pseudo-random pair sequence for a given image size; the
// sequence depends only on (seed, size, radius, samples) so validity filtering
// never perturbs which pairs are considered.
std::vector<PixelPair> sample_pairs(int h, int w, int radius, int samples, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dx_dist(0, w - 1), dy_dist(0, h - 1);
    std::uniform_int_distribution<int> off(-radius, radius);
    std::vector<PixelPair> pairs;
    pairs.reserve(samples);
    for (int i = 0; i < samples; ++i) {
        PixelPair p;
        p.x1 = dx_dist(rng);
        p.y1 = dy_dist(rng);
        int ox = off(rng), oy = off(rng);
        while (ox == 0 && oy == 0) {
            ox = off(rng);
            oy = off(rng);
        }
        p.x2 = p.x1 + ox;
        p.y2 = p.y1 + oy;
        if (p.x2 < 0 || p.x2 >= w || p.y2 < 0 || p.y2 >= h) continue;
        pairs.push_back(p);
    }
    return pairs;
}

}  // namespace

ScalarLoss loss_rank(const ImageD& d_render, const ImageD& d_mono, const ImageB& valid,
                     double margin, int samples, int patch_radius, uint64_t seed) {
    require_same_shape(d_render, d_mono, "loss_rank");
    const int h = d_render.height, w = d_render.width;
    ScalarLoss out;
    out.grads = LossGrads::zeros(h, w);
    const auto pairs = sample_pairs(h, w, patch_radius, samples, seed);

    struct Active {
        PixelPair p;
        double s;  // sign of the reference ordering
    };
    std::vector<Active> active;
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& p : pairs) {
        if (valid.at(p.y1, p.x1) == 0 || valid.at(p.y2, p.x2) == 0) continue;
        ++count;
        const double s_pre = d_mono.at(p.y1, p.x1) - d_mono.at(p.y2, p.x2);
        const double s = sgn(s_pre);
        const double s_re = d_render.at(p.y1, p.x1) - d_render.at(p.y2, p.x2);
        const double term = -s * s_re + margin;
        if (term > 0.0) {
            sum += term;
            if (s != 0.0) active.push_back({p, s});
        }
    }
    if (count == 0) throw NoValidPairsError("loss_rank: no valid pixel pairs sampled");
    out.value = sum / count;
    out.valid_count = count;
    const double inv = 1.0 / count;
    for (const auto& a : active) {
        out.grads.d_depth.at(a.p.y1, a.p.x1) -= a.s * inv;
        out.grads.d_depth.at(a.p.y2, a.p.x2) += a.s * inv;
    }
    return out;
}

ScalarLoss loss_smooth(const ImageD& d_render, const ImageD& d_mono, const ImageB& valid,
                       double n1, double n2, int samples, int patch_radius, uint64_t seed) {
    require_same_shape(d_render, d_mono, "loss_smooth");
    const int h = d_render.height, w = d_render.width;
    ScalarLoss out;
    out.grads = LossGrads::zeros(h, w);
    const auto pairs = sample_pairs(h, w, patch_radius, samples, seed);

    double sum = 0.0;
    int64_t count = 0;
    for (const auto& p : pairs) {
        if (valid.at(p.y1, p.x1) == 0 || valid.at(p.y2, p.x2) == 0) continue;
        ++count;
        if (std::abs(d_mono.at(p.y1, p.x1) - d_mono.at(p.y2, p.x2)) >= n1) continue;
        const double gap = d_render.at(p.y1, p.x1) - d_render.at(p.y2, p.x2);
        const double term = std::abs(gap) - n2;
        if (term > 0.0) {
            sum += term;
            const double s = sgn(gap);
            out.grads.d_depth.at(p.y1, p.x1) += s;
            out.grads.d_depth.at(p.y2, p.x2) -= s;
        }
    }
    if (count == 0) throw NoValidPairsError("loss_smooth: no valid pixel pairs sampled");
    out.value = sum / count;
    out.valid_count = count;
    for (double& v : out.grads.d_depth.data) v /= static_cast<double>(count);
    return out;
}

// ---- feature alignment ------------------------------------------------------

FeatureMap extract_features(const ImageD& image) {
    if (image.channels != 3) throw ShapeMismatchError("extract_features: expected 3 channels");
    const int h = image.height, w = image.width;
    FeatureMap f(h, w, 8);

    ImageD gray(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            gray.at(y, x) = (image.at(y, x, 0) + image.at(y, x, 1) + image.at(y, x, 2)) / 3.0;

    const auto k1 = gaussian_kernel(2, 1.0);
    for (int c = 0; c < 3; ++c) {
        const ImageD blurred = conv_separable(image, c, k1, true);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) f.at(y, x, c) = blurred.at(y, x);
    }

    // Sobel on gray, replicate borders.
    auto pix = [&](int y, int x) {
        return gray.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1));
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = (pix(y - 1, x + 1) + 2.0 * pix(y, x + 1) + pix(y + 1, x + 1)) -
                              (pix(y - 1, x - 1) + 2.0 * pix(y, x - 1) + pix(y + 1, x - 1));
            const double gy = (pix(y + 1, x - 1) + 2.0 * pix(y + 1, x) + pix(y + 1, x + 1)) -
                              (pix(y - 1, x - 1) + 2.0 * pix(y - 1, x) + pix(y - 1, x + 1));
            f.at(y, x, 3) = gx / 8.0;
            f.at(y, x, 4) = gy / 8.0;
        }

    const double sigmas[3] = {2.0, 4.0, 8.0};
    for (int s = 0; s < 3; ++s) {
        const auto k = gaussian_kernel(static_cast<int>(2.0 * sigmas[s]), sigmas[s]);
        const ImageD m = conv_separable(gray, 0, k, true);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) f.at(y, x, 5 + s) = m.at(y, x);
    }
    return f;
}

namespace {

// Bilinear feature sample plus derivatives w.r.t. the continuous coordinates.
void sample_bilinear(const FeatureMap& f, double u, double v, std::vector<double>& val,
                     std::vector<double>& du, std::vector<double>& dv) {
    const int x0 = std::clamp(static_cast<int>(std::floor(u)), 0, f.width - 2);
    const int y0 = std::clamp(static_cast<int>(std::floor(v)), 0, f.height - 2);
    const double fx = u - x0, fy = v - y0;
    val.assign(f.channels, 0.0);
    du.assign(f.channels, 0.0);
    dv.assign(f.channels, 0.0);
    for (int c = 0; c < f.channels; ++c) {
        const double a = f.at(y0, x0, c), b = f.at(y0, x0 + 1, c);
        const double d = f.at(y0 + 1, x0, c), e = f.at(y0 + 1, x0 + 1, c);
        val[c] = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e);
        du[c] = (1 - fy) * (b - a) + fy * (e - d);
        dv[c] = (1 - fx) * (d - a) + fx * (e - b);
    }
}

}  // namespace

ScalarLoss loss_mvs(const FeatureMap& current_features, const std::vector<MvsReference>& refs,
                    const ImageD& d_render, const ImageD& alpha, const CameraModel& cam,
                    double alpha_threshold) {
    if (refs.empty()) throw NoReferencesError("loss_mvs: no reference views");
    for (const auto& r : refs)
        if (r.features->channels != current_features.channels)
            throw ShapeMismatchError("loss_mvs: feature channel mismatch");
    const int h = d_render.height, w = d_render.width;
    ScalarLoss out;
    out.grads = LossGrads::zeros(h, w);

    const int ch = current_features.channels;
    std::vector<double> fr, fr_du, fr_dv;
    double sum = 0.0;
    int64_t count = 0;

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (alpha.at(y, x) <= alpha_threshold) continue;
            const double depth = d_render.at(y, x);
            if (!(depth > 0.0)) continue;
            const Vec3 ray = pixel_ray(cam, x, y);
            const Vec3 x_world = cam.cam_to_world(ray * depth);
            const Vec3 dxw_dd = quat_rotate(quat_conjugate(cam.rotation), ray);

            Eigen::VectorXd fc(ch);
            for (int c = 0; c < ch; ++c) fc[c] = current_features.at(y, x, c);
            const double fc_norm = fc.norm();

            for (const auto& ref : refs) {
                const Vec3 pc = ref.camera.world_to_cam(x_world);
                if (!(pc.z() > 1e-6)) continue;
                const double u = ref.camera.focal * pc.x() / pc.z() + ref.camera.principal[0];
                const double v = ref.camera.focal * pc.y() / pc.z() + ref.camera.principal[1];
                if (u < 0.0 || u > ref.features->width - 1 || v < 0.0 ||
                    v > ref.features->height - 1)
                    continue;
                sample_bilinear(*ref.features, u, v, fr, fr_du, fr_dv);
                Eigen::Map<const Eigen::VectorXd> frv(fr.data(), ch);
                const double fr_norm = frv.norm();
                const double prod = fc_norm * fr_norm;
                const double den = std::max(prod, kNormEps);
                const double dot = fc.dot(frv);
                const double cosv = dot / den;
                sum += 1.0 - cosv;
                ++count;

                // d(1-cos)/dFr, accounting for the epsilon guard.
                Eigen::VectorXd g_fr;
                if (prod > kNormEps)
                    g_fr = -(fc / den) + (dot / (fc_norm * fr_norm * fr_norm * fr_norm)) * frv;
                else
                    g_fr = -(fc / den);

                double g_u = 0.0, g_v = 0.0;
                for (int c = 0; c < ch; ++c) {
                    g_u += g_fr[c] * fr_du[c];
                    g_v += g_fr[c] * fr_dv[c];
                }
                const Vec3 dpc_dd = quat_rotate(ref.camera.rotation, dxw_dd);
                const double fz = ref.camera.focal / pc.z();
                const double du_dd =
                    fz * dpc_dd.x() - ref.camera.focal * pc.x() / (pc.z() * pc.z()) * dpc_dd.z();
                const double dv_dd =
                    fz * dpc_dd.y() - ref.camera.focal * pc.y() / (pc.z() * pc.z()) * dpc_dd.z();
                out.grads.d_depth.at(y, x) += g_u * du_dd + g_v * dv_dd;
            }
        }
    if (count > 0) {
        out.value = sum / count;
        for (double& g : out.grads.d_depth.data) g /= static_cast<double>(count);
    }
    out.valid_count = count;
    return out;
}

// ---- normal consistency -----------------------------------------------------

ScalarLoss loss_normal(const RenderOutput& rendered, const CameraModel& cam,
                       double alpha_threshold) {
    const int h = rendered.height(), w = rendered.width();
    ScalarLoss out;
    out.grads = LossGrads::zeros(h, w);

    auto covered = [&](int y, int x) {
        return rendered.alpha.at(y, x) > alpha_threshold && rendered.depth.at(y, x) > 0.0;
    };

    double sum = 0.0;
    int64_t count = 0;
    for (int y = 1; y + 1 < h; ++y)
        for (int x = 1; x + 1 < w; ++x) {
            if (!covered(y, x) || !covered(y, x - 1) || !covered(y, x + 1) ||
                !covered(y - 1, x) || !covered(y + 1, x))
                continue;
            Vec3 n_blend(rendered.normal.at(y, x, 0), rendered.normal.at(y, x, 1),
                         rendered.normal.at(y, x, 2));
            const double bl_norm = n_blend.norm();
            if (bl_norm < kNormEps) continue;

            const Vec3 rxp = pixel_ray(cam, x + 1, y), rxm = pixel_ray(cam, x - 1, y);
            const Vec3 ryp = pixel_ray(cam, x, y + 1), rym = pixel_ray(cam, x, y - 1);
            const Vec3 a = rxp * rendered.depth.at(y, x + 1) - rxm * rendered.depth.at(y, x - 1);
            const Vec3 b = ryp * rendered.depth.at(y + 1, x) - rym * rendered.depth.at(y - 1, x);
            const Vec3 c = a.cross(b);
            const double c_norm = c.norm();
            if (c_norm < 1e-12) continue;
            Vec3 n_depth = c / c_norm;
            const Vec3 p0 = pixel_ray(cam, x, y) * rendered.depth.at(y, x);
            const double flip = n_depth.dot(p0) > 0.0 ? -1.0 : 1.0;
            n_depth *= flip;
            const Vec3 n_r = n_blend / bl_norm;
            sum += 1.0 - n_r.dot(n_depth);
            ++count;

            // d/d(blended normal): backward through the normalization.
            const Vec3 g_nr = -n_depth;
            const Vec3 g_blend = (g_nr - n_r * n_r.dot(g_nr)) / bl_norm;
            for (int k = 0; k < 3; ++k) out.grads.d_normal.at(y, x, k) += g_blend[k];

            // d/d(depth) through the cross product and its normalization.
            const Vec3 g_nd = -n_r * flip;
            const Vec3 n_hat = c / c_norm;
            const Vec3 g_c = (g_nd - n_hat * n_hat.dot(g_nd)) / c_norm;
            const Vec3 g_a = b.cross(g_c);
            const Vec3 g_b = g_c.cross(a);
            out.grads.d_depth.at(y, x + 1) += g_a.dot(rxp);
            out.grads.d_depth.at(y, x - 1) -= g_a.dot(rxm);
            out.grads.d_depth.at(y + 1, x) += g_b.dot(ryp);
            out.grads.d_depth.at(y - 1, x) -= g_b.dot(rym);
        }
    if (count > 0) {
        out.value = sum / count;
        const double inv = 1.0 / count;
        for (double& g : out.grads.d_depth.data) g *= inv;
        for (double& g : out.grads.d_normal.data) g *= inv;
    }
    out.valid_count = count;
    return out;
}

// ---- depth distortion -------------------------------------------------------

ScalarLoss loss_distortion(const RenderOutput& rendered) {
    const int h = rendered.height(), w = rendered.width();
    if (rendered.blend_offsets.size() != static_cast<size_t>(h) * w + 1)
        throw StaleRenderError("loss_distortion: render lacks blend records");
    ScalarLoss out;
    out.grads = LossGrads::zeros(h, w);
    out.grads.d_blend_weight.assign(rendered.blend_samples.size(), 0.0);
    out.grads.d_blend_depth.assign(rendered.blend_samples.size(), 0.0);

    const double inv = 1.0 / (static_cast<double>(h) * w);
    double sum = 0.0;
    // Sigma_{i<j} 2 w_i w_j |z_i - z_j| per ray, evaluated with prefix sums
    // over the depth-sorted samples instead of the quadratic pair loop.
    std::vector<int64_t> order;
    for (size_t px = 0; px + 1 < rendered.blend_offsets.size(); ++px) {
        const int64_t lo = rendered.blend_offsets[px], hi = rendered.blend_offsets[px + 1];
        if (hi - lo < 2) continue;
        order.resize(hi - lo);
        for (int64_t i = lo; i < hi; ++i) order[i - lo] = i;
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return rendered.blend_samples[a].depth < rendered.blend_samples[b].depth;
        });
        double wsum = 0.0, wzsum = 0.0;  // over samples in front of the cursor
        for (const int64_t i : order) {
            const auto& s = rendered.blend_samples[i];
            const double gap = s.depth * wsum - wzsum;  // Sigma_front w_j (z_i - z_j)
            sum += 2.0 * s.weight * gap;
            out.grads.d_blend_weight[i] += 2.0 * gap * inv;
            out.grads.d_blend_depth[i] += 2.0 * s.weight * wsum * inv;
            wsum += s.weight;
            wzsum += s.weight * s.depth;
        }
        wsum = wzsum = 0.0;  // now over samples behind the cursor
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const auto& s = rendered.blend_samples[*it];
            out.grads.d_blend_weight[*it] += 2.0 * (wzsum - s.depth * wsum) * inv;
            out.grads.d_blend_depth[*it] -= 2.0 * s.weight * wsum * inv;
            wsum += s.weight;
            wzsum += s.weight * s.depth;
        }
    }
    out.value = sum * inv;
    return out;
}

// ---- weighted total ---------------------------------------------------------

namespace {

void axpy(LossGrads& dst, const LossGrads& src, double wgt) {
    if (wgt == 0.0) return;
    for (size_t i = 0; i < src.d_color.data.size(); ++i)
        dst.d_color.data[i] += wgt * src.d_color.data[i];
    for (size_t i = 0; i < src.d_depth.data.size(); ++i)
        dst.d_depth.data[i] += wgt * src.d_depth.data[i];
    for (size_t i = 0; i < src.d_normal.data.size(); ++i)
        dst.d_normal.data[i] += wgt * src.d_normal.data[i];
    for (size_t i = 0; i < src.d_alpha.data.size(); ++i)
        dst.d_alpha.data[i] += wgt * src.d_alpha.data[i];
    if (!src.d_blend_weight.empty()) {
        if (dst.d_blend_weight.size() < src.d_blend_weight.size())
            dst.d_blend_weight.resize(src.d_blend_weight.size(), 0.0);
        if (dst.d_blend_depth.size() < src.d_blend_depth.size())
            dst.d_blend_depth.resize(src.d_blend_depth.size(), 0.0);
        for (size_t i = 0; i < src.d_blend_weight.size(); ++i)
            dst.d_blend_weight[i] += wgt * src.d_blend_weight[i];
        for (size_t i = 0; i < src.d_blend_depth.size(); ++i)
            dst.d_blend_depth[i] += wgt * src.d_blend_depth[i];
    }
}

}  // namespace

TotalLoss total_loss(const std::vector<ViewLossContext>& views, const LossWeights& w) {
    w.validate();
    if (views.empty()) throw Error("total_loss: no views");
    TotalLoss out;
    const double inv_views = 1.0 / views.size();

    for (const auto& ctx : views) {
        const RenderOutput& r = *ctx.rendered;
        const ViewBundle& view = *ctx.view;
        const int h = r.height(), wd = r.width();
        LossGrads g = LossGrads::zeros(h, wd);

        const ImageB* mask = view.mask ? &*view.mask : nullptr;
        auto take = [&](const char* name, const ScalarLoss& term, double wgt) {
            out.terms[name] += wgt * term.value * inv_views;
            axpy(g, term.grads, wgt);
        };

        if (w.w_l1 > 0.0) take("l1", loss_l1(r.color, view.image, mask), w.w_l1);
        if (w.w_ssim > 0.0) take("ssim", loss_ssim(r.color, view.image, mask), w.w_ssim);

        // Coverage validity for the geometric terms.
        ImageB valid(h, wd, 1, 0);
        int64_t n_valid = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < wd; ++x)
                if (r.alpha.at(y, x) > 0.5 && view.pixel_valid(y, x)) {
                    valid.at(y, x) = 1;
                    ++n_valid;
                }

        if (n_valid > 0) {
            if (view.mono_depth) {
                if (w.w_rank > 0.0)
                    take("rank",
                         loss_rank(r.depth, *view.mono_depth, valid, w.margin, w.sample_count,
                                   w.patch_radius, ctx.pair_seed),
                         w.w_rank);
                if (w.w_smooth > 0.0)
                    take("smooth",
                         loss_smooth(r.depth, *view.mono_depth, valid, w.n1, w.n2,
                                     w.sample_count, w.patch_radius,
                                     ctx.pair_seed ^ 0x9e3779b97f4a7c15ull),
                         w.w_smooth);
            }
            if (w.w_mvs > 0.0 && ctx.features && !ctx.refs.empty())
                take("mvs", loss_mvs(*ctx.features, ctx.refs, r.depth, r.alpha, view.camera, 0.5),
                     w.w_mvs);
            if (w.w_normal > 0.0) take("normal", loss_normal(r, view.camera, 0.5), w.w_normal);
        }
        if (w.w_dist > 0.0 && !r.blend_offsets.empty())
            take("dist", loss_distortion(r), w.w_dist);

        for (auto& v : g.d_color.data) v *= inv_views;
        for (auto& v : g.d_depth.data) v *= inv_views;
        for (auto& v : g.d_normal.data) v *= inv_views;
        for (auto& v : g.d_alpha.data) v *= inv_views;
        for (auto& v : g.d_blend_weight) v *= inv_views;
        for (auto& v : g.d_blend_depth) v *= inv_views;
        out.per_view.push_back(std::move(g));
    }
    for (const auto& kv : out.terms) out.value += kv.second;
    return out;
}

}  // namespace splat
