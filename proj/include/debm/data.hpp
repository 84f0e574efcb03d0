#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "debm/rng.hpp"
#include "debm/tensor.hpp"

namespace debm {

struct Dataset {
    std::string name;
    Shape data_shape;  // per-sample shape
    Tensor samples;    // [n, data_shape...]

    int size() const { return samples.shape.empty() ? 0 : samples.shape[0]; }
    Tensor item(int i) const { return batch_item(samples, data_shape, i); }
};

// n points: component uniform over centers, then N(center, std^2 I).
Dataset gaussian_mixture(int n, const std::vector<std::vector<double>>& centers, double stddev, Rng& rng);

// points at uniform angles on circles of the given radii plus radial noise
Dataset rings(int n, const std::vector<double>& radii, double stddev, Rng& rng);

// k centers evenly spaced on a circle; the standard 2-D toy layout
std::vector<std::vector<double>> circle_centers(int k, double radius);

// DET1 tensor file: magic "DET1", u32 version, u32 rank, u32 extents,
// float32 little-endian payload, row-major. Bit-exact roundtrip.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Stream forms, for files that embed DET1 records (checkpoints).
void write_det1(std::ostream& os, const Tensor& t);
Tensor read_det1(std::istream& is, const std::string& context);

// Affine map of a declared source range onto [lo, hi].
Tensor scale_to_range(const Tensor& t, double src_lo, double src_hi, double lo = -1.0, double hi = 1.0);

// Mirror each sample horizontally with probability p. Batch must be
// image-shaped: [n, c, h, w] or [n, h, w].
Tensor flip_augment(const Tensor& batch, double p, Rng& rng);

// PGM "P5" (grayscale, [h,w] or [1,h,w]) and PPM "P6" (color, [3,h,w]),
// maxval 255. Values are mapped from [lo, hi]; loads return raw 0..255.
void save_pgm(const std::string& path, const Tensor& img, double lo = -1.0, double hi = 1.0);
void save_ppm(const std::string& path, const Tensor& img, double lo = -1.0, double hi = 1.0);
Tensor load_pgm(const std::string& path);  // -> [1,h,w], values 0..255
Tensor load_ppm(const std::string& path);  // -> [3,h,w], values 0..255

// Directory of .det1/.pgm/.ppm files with a common shape, sorted by name.
// Image files are rescaled from [0,255] to [-1,1]; DET1 tensors are taken
// as stored.
Dataset load_dir(const std::string& path);

}  // namespace debm
