#include "splat/io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace splat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    return f;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    return f;
}

// Reads one whitespace-delimited netpbm header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    for (;;) {
        const int c = in.get();
        if (c == EOF) throw DecodeError("truncated netpbm header");
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
}

int pnm_int(std::istream& in, const char* what) {
    const std::string tok = pnm_token(in);
    try {
        size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DecodeError(std::string("bad netpbm ") + what + ": " + tok);
    }
}

ImageD read_pnm(const fs::path& path, const char* magic, int channels) {
    auto f = open_in(path);
    if (pnm_token(f) != magic)
        throw DecodeError("not a " + std::string(magic) + " file: " + path.string());
    const int w = pnm_int(f, "width");
    const int h = pnm_int(f, "height");
    const int maxval = pnm_int(f, "maxval");
    if (maxval > 65535) throw DecodeError("unsupported maxval");
    const int bytes = maxval > 255 ? 2 : 1;

    ImageD img(h, w, channels);
    std::vector<uint8_t> row(static_cast<size_t>(w) * channels * bytes);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw DecodeError("truncated pixel data: " + path.string());
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const size_t i = (static_cast<size_t>(x) * channels + c) * bytes;
                // Multi-byte netpbm samples are big-endian.
                const int v = bytes == 1 ? row[i] : (row[i] << 8) | row[i + 1];
                img.at(y, x, c) = static_cast<double>(v) / maxval;
            }
    }
    return img;
}

void write_pnm(const fs::path& path, const ImageD& image, const char* magic, int channels,
               int bits) {
    if (image.channels != channels) throw ShapeMismatchError("write_pnm: channel mismatch");
    if (bits != 8 && bits != 16) throw Error("write_pnm: bits must be 8 or 16");
    const int maxval = (1 << bits) - 1;
    auto f = open_out(path);
    f << magic << "\n" << image.width << " " << image.height << "\n" << maxval << "\n";
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < channels; ++c) {
                const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
                const int q = static_cast<int>(std::lround(v * maxval));
                if (bits == 16) f.put(static_cast<char>((q >> 8) & 0xff));
                f.put(static_cast<char>(q & 0xff));
            }
    if (!f) throw IoError("short write: " + path.string());
}

}  // namespace

ImageD read_ppm(const fs::path& path) { return read_pnm(path, "P6", 3); }
void write_ppm(const fs::path& path, const ImageD& image, int bits) {
    write_pnm(path, image, "P6", 3, bits);
}
ImageD read_pgm(const fs::path& path) { return read_pnm(path, "P5", 1); }
void write_pgm(const fs::path& path, const ImageD& image, int bits) {
    write_pnm(path, image, "P5", 1, bits);
}

ImageD read_pfm(const fs::path& path) {
    auto f = open_in(path);
    if (pnm_token(f) != "Pf") throw DecodeError("not a grayscale PFM: " + path.string());
    const int w = pnm_int(f, "width");
    const int h = pnm_int(f, "height");
    double scale = 0.0;
    try {
        scale = std::stod(pnm_token(f));
    } catch (const std::exception&) {
        throw DecodeError("bad PFM scale");
    }
    if (scale == 0.0) throw DecodeError("PFM scale must be nonzero");
    const bool little = scale < 0.0;

    ImageD img(h, w, 1);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 4);
    // PFM stores rows bottom-to-top.
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw DecodeError("truncated PFM data: " + path.string());
        for (int x = 0; x < w; ++x) {
            uint32_t bits = 0;
            const uint8_t* p = &row[static_cast<size_t>(x) * 4];
            if (little)
                bits = p[0] | (p[1] << 8) | (p[2] << 16) | (uint32_t(p[3]) << 24);
            else
                bits = (uint32_t(p[0]) << 24) | (p[1] << 16) | (p[2] << 8) | p[3];
            float v;
            std::memcpy(&v, &bits, 4);
            img.at(y, x) = v;
        }
    }
    return img;
}

void write_pfm(const fs::path& path, const ImageD& image) {
    if (image.channels != 1) throw ShapeMismatchError("write_pfm: expected 1 channel");
    auto f = open_out(path);
    f << "Pf\n" << image.width << " " << image.height << "\n-1.0\n";
    for (int y = image.height - 1; y >= 0; --y)
        for (int x = 0; x < image.width; ++x) {
            const float v = static_cast<float>(image.at(y, x));
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            const uint8_t bytes[4] = {static_cast<uint8_t>(bits & 0xff),
                                      static_cast<uint8_t>((bits >> 8) & 0xff),
                                      static_cast<uint8_t>((bits >> 16) & 0xff),
                                      static_cast<uint8_t>(bits >> 24)};
            f.write(reinterpret_cast<const char*>(bytes), 4);
        }
    if (!f) throw IoError("short write: " + path.string());
}

// ---- scene file -----------------------------------------------------------

namespace {

constexpr char kSceneMagic[4] = {'S', 'P', 'L', '2'};
constexpr uint32_t kSceneVersion = 1;
constexpr size_t kFieldsPerRecord = 58;

void put_u32(std::ostream& f, uint32_t v) {
    for (int i = 0; i < 4; ++i) f.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::ostream& f, uint64_t v) {
    for (int i = 0; i < 8; ++i) f.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
uint32_t get_u32(std::istream& f) {
    uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw CorruptFileError("truncated scene header");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
}
uint64_t get_u64(std::istream& f) {
    uint8_t b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (!f) throw CorruptFileError("truncated scene header");
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

}  // namespace

void write_scene(const fs::path& path, const GaussianScene& scene) {
    auto f = open_out(path);
    f.write(kSceneMagic, 4);
    put_u32(f, kSceneVersion);
    put_u64(f, scene.primitives.size());
    std::vector<double> rec(kFieldsPerRecord);
    for (const auto& p : scene.primitives) {
        size_t i = 0;
        for (int k = 0; k < 3; ++k) rec[i++] = p.position[k];
        for (int k = 0; k < 4; ++k) rec[i++] = p.rotation[k];
        for (int k = 0; k < 2; ++k) rec[i++] = p.scale[k];
        rec[i++] = p.opacity;
        for (int k = 0; k < 48; ++k) rec[i++] = p.sh[k];
        // Little-endian hosts are assumed throughout this codebase.
        f.write(reinterpret_cast<const char*>(rec.data()),
                static_cast<std::streamsize>(rec.size() * sizeof(double)));
    }
    if (!f) throw IoError("short write: " + path.string());
}

GaussianScene read_scene(const fs::path& path) {
    auto f = open_in(path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kSceneMagic, 4) != 0)
        throw CorruptFileError("bad scene magic: " + path.string());
    const uint32_t version = get_u32(f);
    if (version != kSceneVersion)
        throw UnsupportedVersionError("scene file version " + std::to_string(version));
    const uint64_t count = get_u64(f);

    GaussianScene scene;
    scene.primitives.reserve(count);
    std::vector<double> rec(kFieldsPerRecord);
    for (uint64_t n = 0; n < count; ++n) {
        f.read(reinterpret_cast<char*>(rec.data()),
               static_cast<std::streamsize>(rec.size() * sizeof(double)));
        if (!f) throw CorruptFileError("truncated scene records: " + path.string());
        GaussianPrimitive2D p;
        size_t i = 0;
        for (int k = 0; k < 3; ++k) p.position[k] = rec[i++];
        for (int k = 0; k < 4; ++k) p.rotation[k] = rec[i++];
        for (int k = 0; k < 2; ++k) p.scale[k] = rec[i++];
        p.opacity = rec[i++];
        for (int k = 0; k < 48; ++k) p.sh[k] = rec[i++];
        scene.primitives.push_back(p);
    }
    // Reject trailing bytes so corruption cannot hide after the records.
    f.peek();
    if (!f.eof()) throw CorruptFileError("trailing bytes in scene file: " + path.string());
    return scene;
}

// ---- job configuration ------------------------------------------------------

CameraModel camera_from_json(const json& j) {
    CameraModel cam;
    cam.focal = j.at("focal").get<double>();
    const auto pr = j.at("principal");
    cam.principal = Vec2(pr.at(0).get<double>(), pr.at(1).get<double>());
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    if (j.contains("translation")) {
        const auto t = j.at("translation");
        cam.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    }
    if (j.contains("rotation")) {
        const auto q = j.at("rotation");
        cam.rotation = quat_normalized(Vec4(q.at(0).get<double>(), q.at(1).get<double>(),
                                            q.at(2).get<double>(), q.at(3).get<double>()));
    }
    if (cam.width <= 0 || cam.height <= 0 || !(cam.focal > 0.0))
        throw CorruptFileError("camera requires positive focal and resolution");
    return cam;
}

json camera_to_json(const CameraModel& cam) {
    return json{{"focal", cam.focal},
                {"principal", {cam.principal[0], cam.principal[1]}},
                {"width", cam.width},
                {"height", cam.height},
                {"translation", {cam.translation[0], cam.translation[1], cam.translation[2]}},
                {"rotation", {cam.rotation[0], cam.rotation[1], cam.rotation[2], cam.rotation[3]}}};
}

JobConfig read_job_config(const fs::path& path) {
    auto f = open_in(path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw CorruptFileError("bad job config " + path.string() + ": " + e.what());
    }
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");

    JobConfig cfg;
    try {
        cfg.seed = j.value("seed", uint64_t{0});
        cfg.out_dir = j.value("out_dir", std::string{});
        if (j.contains("views"))
            for (const auto& jv : j.at("views")) {
                ViewSpec v;
                v.image = jv.at("image").get<std::string>();
                v.depth = jv.value("depth", std::string{});
                v.mask = jv.value("mask", std::string{});
                v.camera = camera_from_json(jv.at("camera"));
                cfg.views.push_back(std::move(v));
            }
        if (j.contains("optim")) {
            const auto& jo = j.at("optim");
            cfg.optim.iterations = jo.value("iterations", cfg.optim.iterations);
            cfg.optim.prune_interval = jo.value("prune_interval", cfg.optim.prune_interval);
            cfg.optim.prune_fraction = jo.value("prune_fraction", cfg.optim.prune_fraction);
            cfg.optim.downsample_initial =
                jo.value("downsample_initial", cfg.optim.downsample_initial);
            cfg.optim.downsample_switch_iter =
                jo.value("downsample_switch_iter", cfg.optim.downsample_switch_iter);
            cfg.optim.optimize_poses = jo.value("optimize_poses", cfg.optim.optimize_poses);
            cfg.optim.pose_warmup_iters =
                jo.value("pose_warmup_iters", cfg.optim.pose_warmup_iters);
            cfg.optim.sh_freeze_iters = jo.value("sh_freeze_iters", cfg.optim.sh_freeze_iters);
            auto& r = cfg.optim.rates;
            if (jo.contains("rates")) {
                const auto& jr = jo.at("rates");
                r.position = jr.value("position", r.position);
                r.rotation = jr.value("rotation", r.rotation);
                r.scale = jr.value("scale", r.scale);
                r.opacity = jr.value("opacity", r.opacity);
                r.sh = jr.value("sh", r.sh);
                r.pose_translation = jr.value("pose_translation", r.pose_translation);
                r.pose_rotation = jr.value("pose_rotation", r.pose_rotation);
            }
        }
        if (j.contains("loss")) {
            const auto& jl = j.at("loss");
            auto& w = cfg.loss;
            w.w_l1 = jl.value("w_l1", w.w_l1);
            w.w_ssim = jl.value("w_ssim", w.w_ssim);
            w.w_rank = jl.value("w_rank", w.w_rank);
            w.w_smooth = jl.value("w_smooth", w.w_smooth);
            w.w_mvs = jl.value("w_mvs", w.w_mvs);
            w.w_normal = jl.value("w_normal", w.w_normal);
            w.w_dist = jl.value("w_dist", w.w_dist);
            w.margin = jl.value("margin", w.margin);
            w.n1 = jl.value("n1", w.n1);
            w.n2 = jl.value("n2", w.n2);
            w.sample_count = jl.value("sample_count", w.sample_count);
            w.patch_radius = jl.value("patch_radius", w.patch_radius);
        }
        if (j.contains("densify")) {
            const auto& jd = j.at("densify");
            cfg.densify.K = jd.value("k", cfg.densify.K);
            cfg.densify.patch_size = jd.value("patch_size", cfg.densify.patch_size);
        }
        if (j.contains("backproject")) {
            const auto& jb = j.at("backproject");
            cfg.backproject.stride = jb.value("stride", cfg.backproject.stride);
            cfg.backproject.opacity = jb.value("opacity", cfg.backproject.opacity);
            cfg.backproject.scale_factor = jb.value("scale_factor", cfg.backproject.scale_factor);
        }
        cfg.prune_fraction = j.value("prune_fraction", cfg.prune_fraction);
    } catch (const json::exception& e) {
        throw CorruptFileError("bad job config " + path.string() + ": " + e.what());
    }

    if (cfg.densify.K < 1) throw CorruptFileError("densify.k must be >= 1");
    for (const auto& v : cfg.views) {
        for (const std::string* s : {&v.image, &v.depth, &v.mask}) {
            if (s->empty()) continue;
            if (!fs::exists(base / *s))
                throw IoError("referenced file missing: " + (base / *s).string());
        }
    }
    cfg.optim.seed = cfg.seed;
    cfg.densify.seed = cfg.seed;
    return cfg;
}

ViewBundle load_view(const ViewSpec& spec, const fs::path& base_dir) {
    ViewBundle view;
    view.camera = spec.camera;
    view.image = read_ppm(base_dir / spec.image);
    if (view.image.width != spec.camera.width || view.image.height != spec.camera.height)
        throw ResolutionMismatchError("image resolution differs from camera: " + spec.image);
    if (!spec.depth.empty()) {
        ImageD d = read_pfm(base_dir / spec.depth);
        if (d.width != spec.camera.width || d.height != spec.camera.height)
            throw ResolutionMismatchError("depth resolution differs from camera: " + spec.depth);
        view.mono_depth = std::move(d);
    }
    if (!spec.mask.empty()) {
        const ImageD m = read_pgm(base_dir / spec.mask);
        if (m.width != spec.camera.width || m.height != spec.camera.height)
            throw ResolutionMismatchError("mask resolution differs from camera: " + spec.mask);
        ImageB mask(m.height, m.width, 1);
        for (size_t i = 0; i < m.data.size(); ++i) mask.data[i] = m.data[i] > 0.5 ? 1 : 0;
        view.mask = std::move(mask);
    }
    // Negative or non-finite depth samples are policy-invalid: mask them out
    // rather than rejecting the file.
    if (view.mono_depth) {
        ImageB mask = view.mask ? *view.mask
                                : ImageB(view.image.height, view.image.width, 1, 1);
        for (int y = 0; y < view.image.height; ++y)
            for (int x = 0; x < view.image.width; ++x) {
                const double d = view.mono_depth->at(y, x);
                if (!(d > 0.0) || !std::isfinite(d)) mask.at(y, x) = 0;
            }
        view.mask = std::move(mask);
    }
    return view;
}

// ---- metrics report -----------------------------------------------------------

std::string format_metric(double value) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    return buf;
}

void write_report(const fs::path& path, const std::map<std::string, std::string>& entries) {
    auto f = open_out(path);
    for (const auto& [k, v] : entries) f << k << " " << v << "\n";
    if (!f) throw IoError("short write: " + path.string());
}

std::map<std::string, std::string> read_report(const fs::path& path) {
    auto f = open_in(path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const size_t sp = line.find(' ');
        if (sp == std::string::npos) throw CorruptFileError("bad report line: " + line);
        out[line.substr(0, sp)] = line.substr(sp + 1);
    }
    return out;
}

}  // namespace splat
