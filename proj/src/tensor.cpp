#include "debm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace debm {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

bool shape_valid(const Shape& s) {
    for (int e : s)
        if (e <= 0) return false;
    return true;
}

Tensor::Tensor(Shape s) {
    if (!shape_valid(s)) throw ShapeError("tensor shape " + shape_str(s) + " has non-positive extent");
    shape = std::move(s);
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

Tensor Tensor::zeros(Shape s) { return Tensor(std::move(s)); }

Tensor Tensor::full(Shape s, float v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
}

Tensor Tensor::from(Shape s, std::vector<float> values) {
    if (!shape_valid(s)) throw ShapeError("tensor shape " + shape_str(s) + " has non-positive extent");
    if (static_cast<int64_t>(values.size()) != shape_numel(s))
        throw ShapeError("tensor shape " + shape_str(s) + " expects " + std::to_string(shape_numel(s)) +
                         " values, got " + std::to_string(values.size()));
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
}

Tensor Tensor::scalar(float v) { return from({}, {v}); }

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

int batch_count(const Tensor& batch, const Shape& item_shape) {
    if (batch.rank() != static_cast<int>(item_shape.size()) + 1)
        throw ShapeError("expected batch of rank " + std::to_string(item_shape.size() + 1) + ", got " +
                         shape_str(batch.shape));
    for (size_t i = 0; i < item_shape.size(); ++i)
        if (batch.shape[i + 1] != item_shape[i])
            throw ShapeError("batch item shape mismatch: " + shape_str(batch.shape) + " vs item " +
                             shape_str(item_shape));
    return batch.shape[0];
}

Tensor batch_item(const Tensor& batch, const Shape& item_shape, int i) {
    int n = batch_count(batch, item_shape);
    if (i < 0 || i >= n) throw ShapeError("batch index out of range");
    int64_t sz = shape_numel(item_shape);
    Tensor t(item_shape);
    const float* src = batch.data.data() + static_cast<int64_t>(i) * sz;
    std::copy(src, src + sz, t.data.begin());
    return t;
}

void set_batch_item(Tensor& batch, const Shape& item_shape, int i, const Tensor& item) {
    int n = batch_count(batch, item_shape);
    if (i < 0 || i >= n) throw ShapeError("batch index out of range");
    if (item.shape != item_shape) throw ShapeError("batch item has shape " + shape_str(item.shape));
    int64_t sz = shape_numel(item_shape);
    std::copy(item.data.begin(), item.data.end(), batch.data.begin() + static_cast<int64_t>(i) * sz);
}

Tensor stack(const std::vector<Tensor>& items) {
    if (items.empty()) throw ShapeError("stack of zero tensors");
    Shape out_shape;
    out_shape.push_back(static_cast<int>(items.size()));
    for (int e : items[0].shape) out_shape.push_back(e);
    Tensor out(out_shape);
    for (size_t i = 0; i < items.size(); ++i) set_batch_item(out, items[0].shape, static_cast<int>(i), items[i]);
    return out;
}

double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (float v : t.data) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

double l2_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("l2_diff shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double rel_l2_err(const Tensor& approx, const Tensor& exact) {
    double denom = l2_norm(exact);
    if (denom == 0.0) return l2_norm(approx) == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return l2_diff(approx, exact) / denom;
}

double dot(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("dot shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += static_cast<double>(a.data[i]) * b.data[i];
    return s;
}

}  // namespace debm
