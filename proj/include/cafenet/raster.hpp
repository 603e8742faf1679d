#pragma once

// Deterministic 2-D array primitives shared by dataset construction, label
// preprocessing and attention. Every function is pure.

#include <cstdint>
#include <span>
#include <vector>

#include "cafenet/error.hpp"

namespace cafenet::raster {

/// Row-major H x W array.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width),
          data_(static_cast<std::size_t>(checked_area(height, width)), fill) {}
    Grid(int height, int width, std::vector<T> data)
        : height_(height), width_(width), data_(std::move(data)) {
        require(data_.size() == static_cast<std::size_t>(checked_area(height, width)),
                ErrorKind::Shape, "grid data size does not match dimensions");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    const T& operator()(int y, int x) const {
        return data_[static_cast<std::size_t>(y) * width_ + x];
    }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    bool same_shape(const auto& other) const noexcept {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    static long checked_area(int height, int width) {
        require(height >= 0 && width >= 0, ErrorKind::InvalidInput, "negative grid dimension");
        return static_cast<long>(height) * width;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

/// Values in {0,1}. Houses edge labels and dense segmentation masks.
using BinaryMask = Grid<std::uint8_t>;
/// Values in [0,1]. Houses down-sampled masks and predicted probabilities.
using SoftMask = Grid<double>;

/// Planar multi-channel image (channel-major), values nominally in [0,1].
struct Image {
    std::vector<Grid<double>> planes;

    int channels() const noexcept { return static_cast<int>(planes.size()); }
    int height() const noexcept { return planes.empty() ? 0 : planes.front().height(); }
    int width() const noexcept { return planes.empty() ? 0 : planes.front().width(); }

    friend bool operator==(const Image&, const Image&) = default;
};

Image make_image(int channels, int height, int width, double fill = 0.0);

struct StructuringElement {
    int radius = 1; // square window of side 2 * radius + 1

    explicit StructuringElement(int r = 1) : radius(r) {
        require(r >= 1, ErrorKind::InvalidInput, "structuring element radius must be >= 1");
    }
};

/// Valid-content rectangle inside a padded canvas (top-left anchored).
struct Rect {
    int y = 0;
    int x = 0;
    int height = 0;
    int width = 0;

    bool contains(int py, int px) const noexcept {
        return py >= y && py < y + height && px >= x && px < x + width;
    }
    friend bool operator==(const Rect&, const Rect&) = default;
};

bool is_binary(const BinaryMask& mask);
bool is_soft(const SoftMask& mask);

SoftMask to_soft(const BinaryMask& mask);
BinaryMask threshold(const SoftMask& mask, double above);

/// Max over the square neighbourhood, clipped at the borders.
SoftMask dilate(const SoftMask& mask, StructuringElement se = StructuringElement{1});
BinaryMask dilate(const BinaryMask& mask, StructuringElement se = StructuringElement{1});

/// Pixels within ceil(thickness/2) (Chebyshev) of a differently labelled
/// pixel. The image frame is not a transition.
BinaryMask extract_boundary(const BinaryMask& seg, int thickness);

/// Complement of the 4-connected background component reachable from the
/// image border. Edge pixels count as foreground.
BinaryMask fill_interior(const BinaryMask& edges);

/// Block mean over factor x factor cells. Dimensions must be divisible.
SoftMask downsample_avg(const SoftMask& mask, int factor);

/// Bilinear interpolation with corner-aligned sampling.
SoftMask upsample_bilinear(const SoftMask& mask, int target_height, int target_width);

/// Bilinear resize in either direction (corner aligned); used for image resizing.
Grid<double> resize_bilinear(const Grid<double>& grid, int target_height, int target_width);
template <typename T>
Grid<T> resize_nearest(const Grid<T>& grid, int target_height, int target_width);

template <typename T>
struct Padded {
    T value;
    Rect valid;
};

template <typename T>
Padded<Grid<T>> pad_to(const Grid<T>& grid, int target_height, int target_width);
Padded<Image> pad_to(const Image& image, int target_height, int target_width);

/// Counter-clockwise rotation by quarter_turns * 90 degrees.
template <typename T>
Grid<T> rotate90(const Grid<T>& grid, int quarter_turns);
Image rotate90(const Image& image, int quarter_turns);

/// Rounds `value` up to the next multiple of `multiple`.
int round_up(int value, int multiple);

// ---- template definitions -------------------------------------------------

template <typename T>
Padded<Grid<T>> pad_to(const Grid<T>& grid, int target_height, int target_width) {
    require(grid.height() <= target_height && grid.width() <= target_width, ErrorKind::InvalidInput,
            "pad_to: source " + std::to_string(grid.height()) + "x" + std::to_string(grid.width()) +
                " does not fit in target " + std::to_string(target_height) + "x" +
                std::to_string(target_width));
    Grid<T> out(target_height, target_width, T{});
    for (int y = 0; y < grid.height(); ++y)
        for (int x = 0; x < grid.width(); ++x)
            out(y, x) = grid(y, x);
    return {std::move(out), Rect{0, 0, grid.height(), grid.width()}};
}

template <typename T>
Grid<T> rotate90(const Grid<T>& grid, int quarter_turns) {
    require(quarter_turns >= 0 && quarter_turns <= 3, ErrorKind::InvalidInput,
            "rotate90: quarter_turns must be in {0,1,2,3}");
    const int h = grid.height();
    const int w = grid.width();
    switch (quarter_turns) {
    case 0:
        return grid;
    case 1: {
        Grid<T> out(w, h);
        for (int y = 0; y < w; ++y)
            for (int x = 0; x < h; ++x)
                out(y, x) = grid(x, w - 1 - y);
        return out;
    }
    case 2: {
        Grid<T> out(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out(y, x) = grid(h - 1 - y, w - 1 - x);
        return out;
    }
    default: {
        Grid<T> out(w, h);
        for (int y = 0; y < w; ++y)
            for (int x = 0; x < h; ++x)
                out(y, x) = grid(h - 1 - x, y);
        return out;
    }
    }
}

template <typename T>
Grid<T> resize_nearest(const Grid<T>& grid, int target_height, int target_width) {
    require(!grid.empty() && target_height >= 1 && target_width >= 1, ErrorKind::InvalidInput,
            "resize_nearest: empty source or target");
    Grid<T> out(target_height, target_width);
    for (int y = 0; y < target_height; ++y) {
        const int sy = static_cast<int>((static_cast<long>(y) * 2 + 1) * grid.height() /
                                        (2L * target_height));
        for (int x = 0; x < target_width; ++x) {
            const int sx = static_cast<int>((static_cast<long>(x) * 2 + 1) * grid.width() /
                                            (2L * target_width));
            out(y, x) = grid(sy, sx);
        }
    }
    return out;
}

} // namespace cafenet::raster
