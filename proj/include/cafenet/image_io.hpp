#pragma once

// PNG (libpng) and JPEG (libjpeg) codecs for images and masks.
// Masks are single-channel 8-bit: 0 <-> 0 and 255 <-> 1; soft masks are
// linearly scaled to 0..255.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cafenet/raster.hpp"

namespace cafenet::io {

namespace fs = std::filesystem;

/// Raw 8-bit interleaved pixels. For palette PNGs `samples` holds indices.
struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> samples;
};

RawImage read_png(const fs::path& path, bool keep_palette_indices = false);
RawImage read_jpeg(const fs::path& path);
/// Dispatches on extension (.png / .jpg / .jpeg).
RawImage read_raw(const fs::path& path);
void write_png(const fs::path& path, const RawImage& image);

struct Dimensions {
    int height = 0;
    int width = 0;
};
Dimensions png_dimensions(const fs::path& path);

/// RGB image scaled to [0,1]; grayscale sources are replicated to 3 channels.
raster::Image load_image(const fs::path& path);
void save_image(const fs::path& path, const raster::Image& image);

/// Throws InvalidSource when a value other than 0 or 255 is present.
raster::BinaryMask load_mask(const fs::path& path);
void save_mask(const fs::path& path, const raster::BinaryMask& mask);
void save_soft_mask(const fs::path& path, const raster::SoftMask& mask);

/// Class-index label map (palette indices or gray values as-is).
raster::Grid<std::uint8_t> load_label_map(const fs::path& path);

} // namespace cafenet::io
