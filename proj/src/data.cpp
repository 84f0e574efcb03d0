#include "debm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "debm/errors.hpp"

namespace debm {

Dataset gaussian_mixture(int n, const std::vector<std::vector<double>>& centers, double stddev, Rng& rng) {
    if (n < 1) throw ConfigError("gaussian_mixture: n must be >= 1");
    if (centers.empty()) throw ConfigError("gaussian_mixture: no centers");
    if (!(stddev > 0.0)) throw ConfigError("gaussian_mixture: std must be positive");
    int d = static_cast<int>(centers[0].size());
    for (const auto& c : centers)
        if (static_cast<int>(c.size()) != d) throw ConfigError("gaussian_mixture: centers of mixed dimension");

    Dataset ds;
    ds.name = "gaussian_mixture";
    ds.data_shape = {d};
    ds.samples = Tensor({n, d});
    for (int i = 0; i < n; ++i) {
        const auto& c = centers[rng.uniform_int(centers.size())];
        for (int j = 0; j < d; ++j)
            ds.samples.data[static_cast<size_t>(i) * d + j] = static_cast<float>(c[j] + stddev * rng.gaussian());
    }
    return ds;
}

Dataset rings(int n, const std::vector<double>& radii, double stddev, Rng& rng) {
    if (n < 1) throw ConfigError("rings: n must be >= 1");
    if (radii.empty()) throw ConfigError("rings: no radii");
    if (stddev < 0.0) throw ConfigError("rings: negative std");

    Dataset ds;
    ds.name = "rings";
    ds.data_shape = {2};
    ds.samples = Tensor({n, 2});
    for (int i = 0; i < n; ++i) {
        double r = radii[rng.uniform_int(radii.size())] + stddev * rng.gaussian();
        double a = 2.0 * 3.14159265358979323846 * rng.uniform();
        ds.samples.data[static_cast<size_t>(i) * 2 + 0] = static_cast<float>(r * std::cos(a));
        ds.samples.data[static_cast<size_t>(i) * 2 + 1] = static_cast<float>(r * std::sin(a));
    }
    return ds;
}

std::vector<std::vector<double>> circle_centers(int k, double radius) {
    std::vector<std::vector<double>> centers;
    for (int i = 0; i < k; ++i) {
        double a = 2.0 * 3.14159265358979323846 * i / k;
        centers.push_back({radius * std::cos(a), radius * std::sin(a)});
    }
    return centers;
}

// ---- DET1 ----

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw IoError(path + ": truncated while reading " + what + " at offset " +
                      std::to_string(static_cast<long long>(is.tellg())));
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

static_assert(sizeof(float) == 4, "float32 layout assumed");

void put_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

constexpr uint32_t kDet1Version = 1;

}  // namespace

void write_det1(std::ostream& os, const Tensor& t) {
    os.write("DET1", 4);
    put_u32(os, kDet1Version);
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int e : t.shape) put_u32(os, static_cast<uint32_t>(e));
    for (float v : t.data) put_f32(os, v);
}

Tensor read_det1(std::istream& is, const std::string& context) {
    char magic[4];
    if (!is.read(magic, 4)) throw IoError(context + ": truncated while reading magic at offset 0");
    if (std::memcmp(magic, "DET1", 4) != 0)
        throw IoError(context + ": bad magic at offset 0 (expected DET1)");
    uint32_t version = get_u32(is, context, "version");
    if (version != kDet1Version)
        throw IoError(context + ": unsupported DET1 version " + std::to_string(version));
    uint32_t rank = get_u32(is, context, "rank");
    if (rank > 8) throw IoError(context + ": implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t e = get_u32(is, context, "extent");
        if (e == 0 || e > (1u << 30)) throw IoError(context + ": bad extent " + std::to_string(e));
        shape[i] = static_cast<int>(e);
    }
    int64_t n = shape_numel(shape);
    std::vector<float> values(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        uint32_t u = get_u32(is, context, "payload");
        float f;
        std::memcpy(&f, &u, 4);
        values[static_cast<size_t>(i)] = f;
    }
    Tensor t = Tensor::from(std::move(shape), std::move(values));
    if (!t.all_finite()) throw IoError(context + ": non-finite value in payload");
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path + ": cannot open for writing");
    write_det1(os, t);
    if (!os) throw IoError(path + ": write failed");
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path + ": cannot open");
    return read_det1(is, path);
}

Tensor scale_to_range(const Tensor& t, double src_lo, double src_hi, double lo, double hi) {
    if (!(src_hi > src_lo)) throw ConfigError("scale_to_range: empty source range");
    double a = (hi - lo) / (src_hi - src_lo);
    Tensor out = t;
    for (auto& v : out.data) v = static_cast<float>(lo + a * (double(v) - src_lo));
    return out;
}

Tensor flip_augment(const Tensor& batch, double p, Rng& rng) {
    if (batch.rank() != 3 && batch.rank() != 4)
        throw ShapeError("flip_augment: needs image batch [n,h,w] or [n,c,h,w], got " + shape_str(batch.shape));
    if (p < 0.0 || p > 1.0) throw ConfigError("flip_augment: p outside [0,1]");
    int n = batch.shape[0];
    int c = batch.rank() == 4 ? batch.shape[1] : 1;
    int h = batch.shape[batch.rank() - 2];
    int w = batch.shape[batch.rank() - 1];
    Tensor out = batch;
    for (int i = 0; i < n; ++i) {
        if (!(rng.uniform() < p)) continue;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y) {
                float* row = out.data.data() + ((static_cast<int64_t>(i) * c + ch) * h + y) * w;
                std::reverse(row, row + w);
            }
    }
    return out;
}

// ---- PGM / PPM ----

namespace {

unsigned char quantize(float v, double lo, double hi) {
    double t = (double(v) - lo) / (hi - lo) * 255.0;
    t = std::clamp(t, 0.0, 255.0);
    return static_cast<unsigned char>(std::lround(t));
}

void write_pnm(const std::string& path, const Tensor& img, double lo, double hi, int channels,
               const char* magic) {
    int h, w;
    const float* base = img.data.data();
    if (channels == 1 && img.rank() == 2) {
        h = img.shape[0];
        w = img.shape[1];
    } else if (img.rank() == 3 && img.shape[0] == channels) {
        h = img.shape[1];
        w = img.shape[2];
    } else {
        throw ShapeError(std::string(magic) + " expects " + (channels == 1 ? "[h,w] or [1,h,w]" : "[3,h,w]") +
                         ", got " + shape_str(img.shape));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path + ": cannot open for writing");
    os << magic << "\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * channels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch)
                row[static_cast<size_t>(x) * channels + ch] =
                    quantize(base[(static_cast<int64_t>(ch) * h + y) * w + x], lo, hi);
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError(path + ": write failed");
}

int pnm_token(std::istream& is, const std::string& path) {
    // skip whitespace and '#' comments, then read one non-negative integer
    int ch = is.get();
    while (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n' || ch == '#') {
        if (ch == '#')
            while (ch != '\n' && ch != EOF) ch = is.get();
        ch = is.get();
    }
    if (ch == EOF || ch < '0' || ch > '9') throw IoError(path + ": malformed header");
    long v = 0;
    while (ch >= '0' && ch <= '9') {
        v = v * 10 + (ch - '0');
        if (v > (1 << 20)) throw IoError(path + ": implausible header value");
        ch = is.get();
    }
    return static_cast<int>(v);
}

Tensor read_pnm(const std::string& path, int channels, const char* magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path + ": cannot open");
    char m[2];
    if (!is.read(m, 2) || m[0] != magic[0] || m[1] != magic[1])
        throw IoError(path + ": bad magic (expected " + magic + ")");
    int w = pnm_token(is, path);
    int h = pnm_token(is, path);
    int maxval = pnm_token(is, path);
    if (maxval != 255) throw IoError(path + ": unsupported maxval " + std::to_string(maxval));
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw IoError(path + ": truncated pixel data");
    Tensor t({channels, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch)
                t.data[(static_cast<int64_t>(ch) * h + y) * w + x] =
                    static_cast<float>(raw[(static_cast<size_t>(y) * w + x) * channels + ch]);
    return t;
}

}  // namespace

void save_pgm(const std::string& path, const Tensor& img, double lo, double hi) {
    write_pnm(path, img, lo, hi, 1, "P5");
}

void save_ppm(const std::string& path, const Tensor& img, double lo, double hi) {
    write_pnm(path, img, lo, hi, 3, "P6");
}

Tensor load_pgm(const std::string& path) { return read_pnm(path, 1, "P5"); }

Tensor load_ppm(const std::string& path) { return read_pnm(path, 3, "P6"); }

Dataset load_dir(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw IoError(path + ": not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        if (ext == ".det1" || ext == ".pgm" || ext == ".ppm") files.push_back(e.path());
    }
    if (files.empty()) throw IoError(path + ": no .det1/.pgm/.ppm files");
    std::sort(files.begin(), files.end());

    std::vector<Tensor> items;
    for (const auto& f : files) {
        auto ext = f.extension().string();
        Tensor t;
        if (ext == ".det1")
            t = load_tensor(f.string());
        else if (ext == ".pgm")
            t = scale_to_range(load_pgm(f.string()), 0.0, 255.0);
        else
            t = scale_to_range(load_ppm(f.string()), 0.0, 255.0);
        if (!items.empty() && t.shape != items[0].shape)
            throw IoError(f.string() + ": shape " + shape_str(t.shape) + " differs from first file " +
                          shape_str(items[0].shape));
        items.push_back(std::move(t));
    }
    Dataset ds;
    ds.name = fs::path(path).filename().string();
    ds.data_shape = items[0].shape;
    ds.samples = stack(items);
    return ds;
}

}  // namespace debm
