#pragma once

#include <string>
#include <utility>
#include <vector>

#include "attnd/grid.hpp"

namespace attnd {

/// Writes two images for an attention map:
///   <base_path>.pgm — binary 16-bit graymap, h x w, pixel value
///                     round(65535 * alpha / max(alpha));
///   <base_path>.ppm — binary color pixmap upscaled x32 nearest-neighbor,
///                     with target cells outlined in pure red.
void export_heatmap(const AttentionMap& alpha,
                    const std::vector<std::pair<size_t, size_t>>& target_cells,
                    const std::string& base_path);

struct Graymap {
    size_t h = 0;
    size_t w = 0;
    std::vector<uint16_t> pixels;  // row-major

    /// Row-major index of the brightest pixel (first wins on ties).
    size_t argmax_index() const;
};

/// Parses the 16-bit binary graymap written by export_heatmap.
Graymap read_graymap(const std::string& path);

}  // namespace attnd
