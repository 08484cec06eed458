#pragma once

#include <array>

#include "mvgs/diff/tape.hpp"

namespace mvgs::ssm {

using diff::NDArray;
using diff::Value;

// Axis-aligned scan trajectories over an H x W token grid.
enum class ScanDir { Right, Left, Down, Up };

// Sequential reference recurrence. F, b_grid, c_grid are [H,W,d]; a and d_skip
// are per-channel [d] with |a| < 1. Along each line the hidden state starts at
// zero and the output at a token uses the state before absorbing that token:
//   out = c .* h + d_skip .* f;  h' = a .* h + b .* f
// absorb_then_emit flips that order (ablation variant).
NDArray scan_reference(const NDArray& f, const NDArray& b_grid, const NDArray& c_grid,
                       const NDArray& a, const NDArray& d_skip, ScanDir dir,
                       bool absorb_then_emit = false);

// Same output via blocked associative composition of the affine step maps
// h -> a.*h + u. Matches scan_reference within 1e-10 at f64; block_size 1
// degenerates to the sequential path.
NDArray scan_parallel(const NDArray& f, const NDArray& b_grid, const NDArray& c_grid,
                      const NDArray& a, const NDArray& d_skip, ScanDir dir, int block_size,
                      bool absorb_then_emit = false);

// One direction's trainable parameters. In selective mode the input/output
// maps are produced per token from the features (b = f W_b + bias_b, likewise
// c); in fixed mode they are shared [d] vectors (the second oracle).
struct DirScanParams {
    Value a;       // [d], already squashed into (-1,1)
    Value d_skip;  // [d]
    bool selective = true;
    Value w_b, bias_b, w_c, bias_c;  // selective: [d,d] and [d]
    Value b_fixed, c_fixed;          // fixed mode: [d]
};

Value directional_scan(const Value& f, const DirScanParams& p, ScanDir dir,
                       bool absorb_then_emit = false);

// Four directional scans over a linearly pre-projected grid, fused by sum,
// re-projected, plus a residual connection. Grid shape is preserved.
struct ScanMixerParams {
    std::array<DirScanParams, 4> dirs;  // Right, Left, Down, Up
    Value w_in;   // [d,d]
    Value w_out;  // [d,d]
    Value bias_out;  // [d]
    bool absorb_then_emit = false;
};

Value scan_mixer(const Value& f, const ScanMixerParams& p);

}  // namespace mvgs::ssm
