#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvgs/diff/ndarray.hpp"

namespace mvgs::render {

// 8-bit RGB PNG (non-interlaced, truecolor). Values quantize from/to [0,1].
std::vector<uint8_t> encode_png(const diff::NDArray& rgb01);
diff::NDArray decode_png(const std::vector<uint8_t>& bytes);
void write_png(const std::string& path, const diff::NDArray& rgb01);
diff::NDArray read_png(const std::string& path);

// Lossless float32 depth maps: 16-byte header (magic "FDEP", u32 version,
// u32 width, u32 height, little-endian) followed by row-major float32 data.
void write_depth(const std::string& path, const diff::NDArray& depth);
diff::NDArray read_depth(const std::string& path);

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace mvgs::render
