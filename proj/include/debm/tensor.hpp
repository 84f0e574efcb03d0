#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "debm/errors.hpp"

namespace debm {

// Extents of a dense row-major array. An empty shape denotes a scalar.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool shape_valid(const Shape& s);  // all extents > 0

// Dense multi-dimensional float32 array, row-major.
// A default-constructed Tensor is an empty placeholder (empty() == true);
// every other constructor establishes data.size() == shape_numel(shape).
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape s);  // zeros

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, float v);
    static Tensor from(Shape s, std::vector<float> values);
    static Tensor scalar(float v);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool empty() const { return data.empty(); }

    float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

// Batch helpers: a tensor of rank(item)+1 is a batch of items.
int batch_count(const Tensor& batch, const Shape& item_shape);
Tensor batch_item(const Tensor& batch, const Shape& item_shape, int i);
void set_batch_item(Tensor& batch, const Shape& item_shape, int i, const Tensor& item);
Tensor stack(const std::vector<Tensor>& items);

// Small numeric helpers shared by tests and metrics.
double l2_norm(const Tensor& t);
double l2_diff(const Tensor& a, const Tensor& b);
double rel_l2_err(const Tensor& approx, const Tensor& exact);
double dot(const Tensor& a, const Tensor& b);

}  // namespace debm
