#include "mvgs/diff/ndarray.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mvgs::diff {

namespace {
std::atomic<Precision> g_precision{Precision::f64};

inline double round1(double x) { return static_cast<double>(static_cast<float>(x)); }
}  // namespace

Precision precision() { return g_precision.load(std::memory_order_relaxed); }
void set_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

NDArray::NDArray(Shape s, double fill) : shape(std::move(s)) {
    for (int d : shape)
        if (d < 0) throw std::invalid_argument("NDArray: negative dim in " + shape_str(shape));
    data.assign(static_cast<size_t>(numel(shape)), fill);
}

NDArray NDArray::scalar(double v) {
    NDArray a;
    a.shape = {1};
    a.data = {v};
    return a;
}

NDArray NDArray::from(Shape s, std::vector<double> d) {
    if (numel(s) != static_cast<int64_t>(d.size()))
        throw std::invalid_argument("NDArray::from: data size " + std::to_string(d.size()) +
                                    " does not match shape " + shape_str(s));
    NDArray a;
    a.shape = std::move(s);
    a.data = std::move(d);
    return a;
}

void NDArray::round_to_precision() {
    if (precision() == Precision::f32)
        for (double& x : data) x = round1(x);
}

namespace kernels {

bool broadcast_ok(const Shape& big, const Shape& small) {
    if (small.size() == 1 && small[0] == 1) return true;  // scalar
    if (small.size() > big.size()) return false;
    const size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[off + i]) return false;
    return true;
}

NDArray binary(Binary op, const NDArray& a, const NDArray& b) {
    const NDArray* big = &a;
    const NDArray* small = &b;
    bool b_is_small = true;
    if (a.size() < b.size()) {
        big = &b;
        small = &a;
        b_is_small = false;
    }
    if (!broadcast_ok(big->shape, small->shape))
        throw std::invalid_argument("elementwise op: incompatible shapes " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape) +
                                    " (only trailing-suffix broadcast is supported)");
    NDArray out(big->shape);
    const int64_t n = big->size();
    const int64_t m = small->size();
    for (int64_t i = 0; i < n; ++i) {
        const double x = b_is_small ? a[i] : a[i % m];
        const double y = b_is_small ? b[i % m] : b[i];
        switch (op) {
            case Binary::Add: out[i] = x + y; break;
            case Binary::Sub: out[i] = x - y; break;
            case Binary::Mul: out[i] = x * y; break;
            case Binary::Div: out[i] = x / y; break;
        }
    }
    return out;
}

#define MVGS_UNARY(name, expr)                    \
    NDArray name(const NDArray& a) {              \
        NDArray out(a.shape);                     \
        for (int64_t i = 0; i < a.size(); ++i) {  \
            const double x = a[i];                \
            (void)x;                              \
            out[i] = (expr);                      \
        }                                         \
        return out;                               \
    }

MVGS_UNARY(neg, -x)
MVGS_UNARY(sin, std::sin(x))
MVGS_UNARY(cos, std::cos(x))
MVGS_UNARY(exp, std::exp(x))
MVGS_UNARY(log, std::log(x))
MVGS_UNARY(sqrt, std::sqrt(x))
MVGS_UNARY(tanh, std::tanh(x))
#undef MVGS_UNARY

NDArray sigmoid(const NDArray& a) {
    NDArray out(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return out;
}

NDArray softplus(const NDArray& a) {
    NDArray out(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        if (x > 30.0)
            out[i] = x;
        else if (x < -30.0)
            out[i] = std::exp(x);
        else
            out[i] = std::log1p(std::exp(x));
    }
    return out;
}

NDArray leaky_relu(const NDArray& a, double slope) {
    NDArray out(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0 ? a[i] : slope * a[i];
    return out;
}

NDArray clamp(const NDArray& a, double lo, double hi) {
    NDArray out(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] < lo ? lo : (a[i] > hi ? hi : a[i]);
    return out;
}

NDArray matmul(const NDArray& a, const NDArray& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul: need [m,k]x[k,n], got " + shape_str(a.shape) + " x " +
                                    shape_str(b.shape));
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    NDArray out(Shape{m, n});
    // ikj order keeps the inner loop contiguous in b and out.
    for (int i = 0; i < m; ++i) {
        double* orow = &out.data[static_cast<size_t>(i) * n];
        const double* arow = &a.data[static_cast<size_t>(i) * k];
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(kk) * n];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

NDArray transpose2d(const NDArray& a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose2d: need 2-d, got " + shape_str(a.shape));
    const int m = a.shape[0], n = a.shape[1];
    NDArray out(Shape{n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(j) * m + i] = a.data[static_cast<size_t>(i) * n + j];
    return out;
}

NDArray sum_all(const NDArray& a) {
    double s = 0.0;
    for (double x : a.data) s += x;
    return NDArray::scalar(s);
}

NDArray mean_all(const NDArray& a) {
    double s = 0.0;
    for (double x : a.data) s += x;
    return NDArray::scalar(s / static_cast<double>(a.size()));
}

NDArray sum_last(const NDArray& a) {
    if (a.ndim() < 1) throw std::invalid_argument("sum_last: scalar input");
    const int d = a.shape.back();
    Shape os = a.shape;
    os.back() = 1;
    NDArray out(os);
    const int64_t groups = a.size() / d;
    for (int64_t g = 0; g < groups; ++g) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += a[g * d + j];
        out[g] = s;
    }
    return out;
}

NDArray repeat_last(const NDArray& a, int k) {
    if (a.shape.empty() || a.shape.back() != 1)
        throw std::invalid_argument("repeat_last: last dim must be 1, got " + shape_str(a.shape));
    Shape os = a.shape;
    os.back() = k;
    NDArray out(os);
    for (int64_t g = 0; g < a.size(); ++g)
        for (int j = 0; j < k; ++j) out[g * k + j] = a[g];
    return out;
}

NDArray softmax_rows(const NDArray& a) {
    if (a.ndim() != 2) throw std::invalid_argument("softmax_rows: need 2-d, got " + shape_str(a.shape));
    const int m = a.shape[0], n = a.shape[1];
    NDArray out(a.shape);
    for (int i = 0; i < m; ++i) {
        const double* row = &a.data[static_cast<size_t>(i) * n];
        double* orow = &out.data[static_cast<size_t>(i) * n];
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= s;
    }
    return out;
}

NDArray gather_rows(const NDArray& a, const std::vector<int>& idx) {
    if (a.ndim() < 2) throw std::invalid_argument("gather_rows: need >=2-d, got " + shape_str(a.shape));
    const int64_t rs = a.row_size();
    Shape os = a.shape;
    os[0] = static_cast<int>(idx.size());
    NDArray out(os);
    for (size_t r = 0; r < idx.size(); ++r) {
        const int src = idx[r];
        if (src < 0) continue;  // padding row stays zero
        if (src >= a.rows()) throw std::out_of_range("gather_rows: index " + std::to_string(src));
        std::copy_n(&a.data[static_cast<size_t>(src) * rs], rs, &out.data[r * rs]);
    }
    return out;
}

NDArray scatter_rows(const NDArray& a, const std::vector<int>& idx, int n_rows) {
    if (a.ndim() < 2 || a.rows() != static_cast<int>(idx.size()))
        throw std::invalid_argument("scatter_rows: row count must match index count");
    const int64_t rs = a.row_size();
    Shape os = a.shape;
    os[0] = n_rows;
    NDArray out(os);
    for (size_t r = 0; r < idx.size(); ++r) {
        const int dst = idx[r];
        if (dst < 0) continue;
        if (dst >= n_rows) throw std::out_of_range("scatter_rows: index " + std::to_string(dst));
        for (int64_t c = 0; c < rs; ++c) out.data[static_cast<size_t>(dst) * rs + c] += a.data[r * rs + c];
    }
    return out;
}

NDArray concat_rows(const std::vector<const NDArray*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty part list");
    Shape os = parts[0]->shape;
    int total = 0;
    for (const NDArray* p : parts) {
        if (p->ndim() != parts[0]->ndim() || p->row_size() != parts[0]->row_size())
            throw std::invalid_argument("concat_rows: mismatched row shapes");
        total += p->rows();
    }
    os[0] = total;
    NDArray out(os);
    int64_t off = 0;
    for (const NDArray* p : parts) {
        std::copy(p->data.begin(), p->data.end(), out.data.begin() + off);
        off += p->size();
    }
    return out;
}

NDArray slice_last(const NDArray& a, int from, int to) {
    const int d = a.shape.back();
    if (from < 0 || to > d || from >= to)
        throw std::invalid_argument("slice_last: bad range [" + std::to_string(from) + "," +
                                    std::to_string(to) + ") for last dim " + std::to_string(d));
    Shape os = a.shape;
    os.back() = to - from;
    NDArray out(os);
    const int64_t groups = a.size() / d;
    const int w = to - from;
    for (int64_t g = 0; g < groups; ++g)
        std::copy_n(&a.data[g * d + from], w, &out.data[g * w]);
    return out;
}

NDArray reduce_to(const NDArray& g, const Shape& target) {
    if (g.shape == target) return g;
    NDArray out(target);
    const int64_t m = out.size();
    for (int64_t i = 0; i < g.size(); ++i) out[i % m] += g[i];
    return out;
}

}  // namespace kernels

}  // namespace mvgs::diff
