#include "mvgs/ssm/scan.hpp"

#include <stdexcept>

namespace mvgs::ssm {

namespace k = diff::kernels;
using diff::Shape;

namespace {

struct GridDims {
    int h, w, d, lines, steps;
};

GridDims dims_for(const Shape& s, ScanDir dir) {
    if (s.size() != 3) throw std::invalid_argument("scan: token grid must be [H,W,d], got " + diff::shape_str(s));
    GridDims g{s[0], s[1], s[2], 0, 0};
    const bool horizontal = dir == ScanDir::Right || dir == ScanDir::Left;
    g.lines = horizontal ? g.h : g.w;
    g.steps = horizontal ? g.w : g.h;
    return g;
}

// Flat token index of line `l`, step `m` along the given direction.
inline int token_index(const GridDims& g, ScanDir dir, int l, int m) {
    switch (dir) {
        case ScanDir::Right: return l * g.w + m;
        case ScanDir::Left: return l * g.w + (g.w - 1 - m);
        case ScanDir::Down: return m * g.w + l;
        case ScanDir::Up: return (g.h - 1 - m) * g.w + l;
    }
    return 0;
}

void check_grids(const NDArray& f, const NDArray& b, const NDArray& c, const NDArray& a,
                 const NDArray& d_skip) {
    if (b.shape != f.shape || c.shape != f.shape)
        throw std::invalid_argument("scan: b/c grids must match features " + diff::shape_str(f.shape));
    const int d = f.shape[2];
    if (a.size() != d || d_skip.size() != d)
        throw std::invalid_argument("scan: a/d_skip must be [d] with d=" + std::to_string(d));
}

}  // namespace

NDArray scan_reference(const NDArray& f, const NDArray& b_grid, const NDArray& c_grid,
                       const NDArray& a, const NDArray& d_skip, ScanDir dir,
                       bool absorb_then_emit) {
    check_grids(f, b_grid, c_grid, a, d_skip);
    const GridDims g = dims_for(f.shape, dir);
    NDArray out(f.shape);
    std::vector<double> h(static_cast<size_t>(g.d));
    for (int l = 0; l < g.lines; ++l) {
        std::fill(h.begin(), h.end(), 0.0);
        for (int m = 0; m < g.steps; ++m) {
            const int64_t t = static_cast<int64_t>(token_index(g, dir, l, m)) * g.d;
            for (int ch = 0; ch < g.d; ++ch) {
                const double fv = f[t + ch];
                if (absorb_then_emit) {
                    h[static_cast<size_t>(ch)] = a[ch] * h[static_cast<size_t>(ch)] + b_grid[t + ch] * fv;
                    out[t + ch] = c_grid[t + ch] * h[static_cast<size_t>(ch)] + d_skip[ch] * fv;
                } else {
                    out[t + ch] = c_grid[t + ch] * h[static_cast<size_t>(ch)] + d_skip[ch] * fv;
                    h[static_cast<size_t>(ch)] = a[ch] * h[static_cast<size_t>(ch)] + b_grid[t + ch] * fv;
                }
            }
        }
    }
    return out;
}

NDArray scan_parallel(const NDArray& f, const NDArray& b_grid, const NDArray& c_grid,
                      const NDArray& a, const NDArray& d_skip, ScanDir dir, int block_size,
                      bool absorb_then_emit) {
    check_grids(f, b_grid, c_grid, a, d_skip);
    if (block_size < 1) throw std::invalid_argument("scan_parallel: block_size must be >= 1");
    const GridDims g = dims_for(f.shape, dir);
    NDArray out(f.shape);

    // Affine step maps h -> a.*h + u compose associatively:
    // (A2,b2) o (A1,b1) = (A2.*A1, A2.*b1 + b2). Per line we build the
    // cumulative prefix map inside each block, then chain block carries.
    const size_t d = static_cast<size_t>(g.d);
    std::vector<double> local_a(static_cast<size_t>(g.steps) * d);
    std::vector<double> local_b(static_cast<size_t>(g.steps) * d);
    std::vector<double> carry(d), block_a(d), block_b(d);

    for (int l = 0; l < g.lines; ++l) {
        std::fill(carry.begin(), carry.end(), 0.0);
        for (int start = 0; start < g.steps; start += block_size) {
            const int stop = std::min(g.steps, start + block_size);
            std::fill(block_a.begin(), block_a.end(), 1.0);
            std::fill(block_b.begin(), block_b.end(), 0.0);
            for (int m = start; m < stop; ++m) {
                const int64_t t = static_cast<int64_t>(token_index(g, dir, l, m)) * g.d;
                double* la = &local_a[static_cast<size_t>(m) * d];
                double* lb = &local_b[static_cast<size_t>(m) * d];
                for (size_t ch = 0; ch < d; ++ch) {
                    la[ch] = block_a[ch];
                    lb[ch] = block_b[ch];
                    const double u = b_grid[t + static_cast<int64_t>(ch)] * f[t + static_cast<int64_t>(ch)];
                    block_a[ch] = a[static_cast<int64_t>(ch)] * block_a[ch];
                    block_b[ch] = a[static_cast<int64_t>(ch)] * block_b[ch] + u;
                }
            }
            for (int m = start; m < stop; ++m) {
                const int64_t t = static_cast<int64_t>(token_index(g, dir, l, m)) * g.d;
                const double* la = &local_a[static_cast<size_t>(m) * d];
                const double* lb = &local_b[static_cast<size_t>(m) * d];
                for (size_t ch = 0; ch < d; ++ch) {
                    double hm = la[ch] * carry[ch] + lb[ch];  // state before absorbing m
                    if (absorb_then_emit) {
                        const double u = b_grid[t + static_cast<int64_t>(ch)] * f[t + static_cast<int64_t>(ch)];
                        hm = a[static_cast<int64_t>(ch)] * hm + u;
                    }
                    out[t + static_cast<int64_t>(ch)] =
                        c_grid[t + static_cast<int64_t>(ch)] * hm +
                        d_skip[static_cast<int64_t>(ch)] * f[t + static_cast<int64_t>(ch)];
                }
            }
            for (size_t ch = 0; ch < d; ++ch) carry[ch] = block_a[ch] * carry[ch] + block_b[ch];
        }
    }
    return out;
}

Value directional_scan(const Value& f, const DirScanParams& p, ScanDir dir,
                       bool absorb_then_emit) {
    const GridDims g = dims_for(f.shape(), dir);
    diff::Tape& t = *f.tape();
    Value f2 = diff::reshape(f, Shape{g.h * g.w, g.d});

    Value ones_grid = t.constant(NDArray(Shape{g.h * g.w, g.d}, 1.0));
    Value b_grid = p.selective ? diff::add(diff::matmul(f2, p.w_b), p.bias_b)
                               : diff::mul(ones_grid, p.b_fixed);
    Value c_grid = p.selective ? diff::add(diff::matmul(f2, p.w_c), p.bias_c)
                               : diff::mul(ones_grid, p.c_fixed);

    Value h = t.constant(NDArray(Shape{g.lines, g.d}, 0.0));
    std::vector<Value> step_outputs;
    step_outputs.reserve(static_cast<size_t>(g.steps));
    for (int m = 0; m < g.steps; ++m) {
        auto idx = std::make_shared<std::vector<int>>();
        idx->reserve(static_cast<size_t>(g.lines));
        for (int l = 0; l < g.lines; ++l) idx->push_back(token_index(g, dir, l, m));
        auto idx_c = std::shared_ptr<const std::vector<int>>(std::move(idx));
        Value x = diff::gather_rows(f2, idx_c);
        Value b = diff::gather_rows(b_grid, idx_c);
        Value c = diff::gather_rows(c_grid, idx_c);
        if (absorb_then_emit) {
            h = diff::add(diff::mul(h, p.a), diff::mul(b, x));
            step_outputs.push_back(diff::add(diff::mul(c, h), diff::mul(x, p.d_skip)));
        } else {
            step_outputs.push_back(diff::add(diff::mul(c, h), diff::mul(x, p.d_skip)));
            h = diff::add(diff::mul(h, p.a), diff::mul(b, x));
        }
    }

    // Concatenated step-major rows back into row-major token order.
    Value stacked = diff::concat_rows(step_outputs);
    std::vector<int> perm(static_cast<size_t>(g.h) * g.w);
    for (int m = 0; m < g.steps; ++m)
        for (int l = 0; l < g.lines; ++l)
            perm[static_cast<size_t>(token_index(g, dir, l, m))] = m * g.lines + l;
    Value ordered = diff::gather_rows(stacked, perm);
    return diff::reshape(ordered, f.shape());
}

Value scan_mixer(const Value& f, const ScanMixerParams& p) {
    const Shape& s = f.shape();
    if (s.size() != 3) throw std::invalid_argument("scan_mixer: need [H,W,d] grid");
    const int hw = s[0] * s[1], d = s[2];
    Value f2 = diff::reshape(f, Shape{hw, d});
    Value g = diff::reshape(diff::matmul(f2, p.w_in), s);

    static const ScanDir kDirs[4] = {ScanDir::Right, ScanDir::Left, ScanDir::Down, ScanDir::Up};
    Value fused;
    for (int i = 0; i < 4; ++i) {
        Value scanned = directional_scan(g, p.dirs[static_cast<size_t>(i)], kDirs[i], p.absorb_then_emit);
        fused = i == 0 ? scanned : diff::add(fused, scanned);
    }
    Value fused2 = diff::reshape(fused, Shape{hw, d});
    Value out = diff::add(diff::matmul(fused2, p.w_out), p.bias_out);
    return diff::add(f, diff::reshape(out, s));
}

}  // namespace mvgs::ssm
