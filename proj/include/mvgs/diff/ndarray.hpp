#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mvgs::diff {

// Numeric precision for all recorded computation. f64 keeps raw doubles; f32
// rounds the result of every primitive to float, giving 32-bit semantics for
// runtime while verification (gradient checks) runs in f64.
enum class Precision { f64, f32 };

Precision precision();
void set_precision(Precision p);

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major n-d array of doubles.
struct NDArray {
    Shape shape;
    std::vector<double> data;

    NDArray() = default;
    explicit NDArray(Shape s, double fill = 0.0);
    static NDArray scalar(double v);
    static NDArray from(Shape s, std::vector<double> d);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-d accessors (first dim x flattened rest).
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t row_size() const { return (shape.empty() || shape[0] == 0) ? 0 : size() / shape[0]; }
    double& at2(int r, int c) { return data[static_cast<size_t>(r) * row_size() + c]; }
    double at2(int r, int c) const { return data[static_cast<size_t>(r) * row_size() + c]; }

    bool same_shape(const NDArray& o) const { return shape == o.shape; }
    void round_to_precision();
};

// Shared forward kernels, used by the tape and by hand-written backwards.
namespace kernels {

enum class Binary { Add, Sub, Mul, Div };

// Elementwise with trailing-suffix broadcasting: shapes must be equal, or the
// smaller operand's shape must equal a trailing suffix of the larger's (a
// scalar [1] broadcasts against anything). Anything else is rejected.
NDArray binary(Binary op, const NDArray& a, const NDArray& b);
bool broadcast_ok(const Shape& big, const Shape& small);

NDArray neg(const NDArray& a);
NDArray sin(const NDArray& a);
NDArray cos(const NDArray& a);
NDArray exp(const NDArray& a);
NDArray log(const NDArray& a);
NDArray sqrt(const NDArray& a);
NDArray tanh(const NDArray& a);
NDArray sigmoid(const NDArray& a);
NDArray softplus(const NDArray& a);
NDArray leaky_relu(const NDArray& a, double slope);
NDArray clamp(const NDArray& a, double lo, double hi);

NDArray matmul(const NDArray& a, const NDArray& b);
NDArray transpose2d(const NDArray& a);

NDArray sum_all(const NDArray& a);
NDArray mean_all(const NDArray& a);
NDArray sum_last(const NDArray& a);                   // [..., d] -> [..., 1]
NDArray repeat_last(const NDArray& a, int k);         // [..., 1] -> [..., k]
NDArray softmax_rows(const NDArray& a);               // 2-d, softmax over dim 1

NDArray gather_rows(const NDArray& a, const std::vector<int>& idx);   // idx -1 -> zero row
NDArray scatter_rows(const NDArray& a, const std::vector<int>& idx, int n_rows);
NDArray concat_rows(const std::vector<const NDArray*>& parts);
NDArray slice_last(const NDArray& a, int from, int to);

// Sums g down to `target` by adding suffix-broadcast repeats together.
NDArray reduce_to(const NDArray& g, const Shape& target);

}  // namespace kernels

}  // namespace mvgs::diff
