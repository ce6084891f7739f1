#include "attnd/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "attnd/errors.hpp"
#include "attnd/serialize.hpp"

namespace attnd {

namespace {

constexpr size_t kUpscale = 32;
constexpr size_t kOutline = 2;  // outline thickness in pixels

}  // namespace

void export_heatmap(const AttentionMap& alpha,
                    const std::vector<std::pair<size_t, size_t>>& target_cells,
                    const std::string& base_path) {
    const size_t h = alpha.h(), w = alpha.w();
    const auto& a = alpha.weights.data();
    double max_v = 0.0;
    for (double v : a) max_v = std::max(max_v, v);
    if (max_v <= 0.0) max_v = 1.0;  // all-zero map renders black

    // 16-bit graymap, most significant byte first per the netpbm format.
    {
        std::ostringstream head;
        head << "P5\n" << w << ' ' << h << "\n65535\n";
        std::string bytes = head.str();
        bytes.reserve(bytes.size() + a.size() * 2);
        for (double v : a) {
            const auto p = static_cast<uint16_t>(std::lround(65535.0 * v / max_v));
            bytes.push_back(static_cast<char>(p >> 8));
            bytes.push_back(static_cast<char>(p & 0xff));
        }
        write_file_bytes(base_path + ".pgm", bytes.data(), bytes.size());
    }

    // Upscaled pixmap with red target outlines.
    {
        const size_t W = w * kUpscale, H = h * kUpscale;
        std::vector<uint8_t> rgb(W * H * 3);
        for (size_t y = 0; y < H; ++y) {
            for (size_t x = 0; x < W; ++x) {
                const auto g =
                    static_cast<uint8_t>(std::lround(255.0 * a[(y / kUpscale) * w + x / kUpscale] / max_v));
                uint8_t* px = rgb.data() + (y * W + x) * 3;
                px[0] = px[1] = px[2] = g;
            }
        }
        for (const auto& [r, c] : target_cells) {
            if (r >= h || c >= w) throw InputError("target cell outside the attention map");
            const size_t y0 = r * kUpscale, x0 = c * kUpscale;
            for (size_t dy = 0; dy < kUpscale; ++dy) {
                for (size_t dx = 0; dx < kUpscale; ++dx) {
                    const bool edge = dy < kOutline || dy >= kUpscale - kOutline || dx < kOutline ||
                                      dx >= kUpscale - kOutline;
                    if (!edge) continue;
                    uint8_t* px = rgb.data() + ((y0 + dy) * W + x0 + dx) * 3;
                    px[0] = 255;
                    px[1] = 0;
                    px[2] = 0;
                }
            }
        }
        std::ostringstream head;
        head << "P6\n" << W << ' ' << H << "\n255\n";
        std::string bytes = head.str();
        bytes.insert(bytes.end(), rgb.begin(), rgb.end());
        write_file_bytes(base_path + ".ppm", bytes.data(), bytes.size());
    }
}

size_t Graymap::argmax_index() const {
    size_t best = 0;
    for (size_t i = 1; i < pixels.size(); ++i) {
        if (pixels[i] > pixels[best]) best = i;
    }
    return best;
}

Graymap read_graymap(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    // header: "P5\n<w> <h>\n65535\n"
    std::string text(bytes.begin(), bytes.end());
    std::istringstream head(text);
    std::string magic;
    size_t w = 0, h = 0, maxval = 0;
    head >> magic >> w >> h >> maxval;
    if (magic != "P5" || w == 0 || h == 0) throw FormatError(path + ": not a binary graymap");
    if (maxval != 65535) throw FormatError(path + ": expected 16-bit graymap");
    head.get();  // single whitespace after maxval
    const size_t offset = static_cast<size_t>(head.tellg());
    if (bytes.size() != offset + w * h * 2) throw FormatError(path + ": truncated graymap payload");
    Graymap g;
    g.h = h;
    g.w = w;
    g.pixels.resize(w * h);
    for (size_t i = 0; i < w * h; ++i) {
        g.pixels[i] = static_cast<uint16_t>((bytes[offset + 2 * i] << 8) | bytes[offset + 2 * i + 1]);
    }
    return g;
}

}  // namespace attnd
