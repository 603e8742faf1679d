#include "cafenet/raster.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

namespace cafenet {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::MissingSource: return "missing-source";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::InvalidSource: return "invalid-source";
    case ErrorKind::BuildError: return "build-error";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Overlap: return "overlap";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Config: return "config";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Sampling: return "sampling";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Version: return "version";
    case ErrorKind::Mismatch: return "mismatch";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

} // namespace cafenet

namespace cafenet::raster {

namespace {

void require_nonempty(int h, int w, const char* op) {
    require(h >= 1 && w >= 1, ErrorKind::InvalidInput, std::string(op) + ": empty mask");
}

// Separable running max; the square window is the product of two 1-D windows.
template <typename T>
Grid<T> max_filter(const Grid<T>& in, int radius) {
    const int h = in.height();
    const int w = in.width();
    Grid<T> rows(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            T m = in(y, x);
            const int x0 = std::max(0, x - radius);
            const int x1 = std::min(w - 1, x + radius);
            for (int xx = x0; xx <= x1; ++xx)
                m = std::max(m, in(y, xx));
            rows(y, x) = m;
        }
    }
    Grid<T> out(h, w);
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - radius);
        const int y1 = std::min(h - 1, y + radius);
        for (int x = 0; x < w; ++x) {
            T m = rows(y, x);
            for (int yy = y0; yy <= y1; ++yy)
                m = std::max(m, rows(yy, x));
            out(y, x) = m;
        }
    }
    return out;
}

} // namespace

Image make_image(int channels, int height, int width, double fill) {
    Image img;
    img.planes.assign(static_cast<std::size_t>(channels), Grid<double>(height, width, fill));
    return img;
}

bool is_binary(const BinaryMask& mask) {
    return std::all_of(mask.values().begin(), mask.values().end(),
                       [](std::uint8_t v) { return v <= 1; });
}

bool is_soft(const SoftMask& mask) {
    return std::all_of(mask.values().begin(), mask.values().end(),
                       [](double v) { return v >= 0.0 && v <= 1.0; });
}

SoftMask to_soft(const BinaryMask& mask) {
    SoftMask out(mask.height(), mask.width());
    std::transform(mask.values().begin(), mask.values().end(), out.values().begin(),
                   [](std::uint8_t v) { return static_cast<double>(v); });
    return out;
}

BinaryMask threshold(const SoftMask& mask, double above) {
    BinaryMask out(mask.height(), mask.width());
    std::transform(mask.values().begin(), mask.values().end(), out.values().begin(),
                   [above](double v) { return static_cast<std::uint8_t>(v > above ? 1 : 0); });
    return out;
}

SoftMask dilate(const SoftMask& mask, StructuringElement se) {
    require_nonempty(mask.height(), mask.width(), "dilate");
    return max_filter(mask, se.radius);
}

BinaryMask dilate(const BinaryMask& mask, StructuringElement se) {
    require_nonempty(mask.height(), mask.width(), "dilate");
    return max_filter(mask, se.radius);
}

BinaryMask extract_boundary(const BinaryMask& seg, int thickness) {
    require(thickness >= 1, ErrorKind::InvalidInput,
            "extract_boundary: thickness must be >= 1, got " + std::to_string(thickness));
    require(is_binary(seg), ErrorKind::InvalidInput, "extract_boundary: mask is not binary");
    if (seg.empty())
        return seg;
    const int radius = (thickness + 1) / 2;
    BinaryMask background(seg.height(), seg.width());
    std::transform(seg.values().begin(), seg.values().end(), background.values().begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(1 - v); });
    const BinaryMask near_fg = max_filter(seg, radius);
    const BinaryMask near_bg = max_filter(background, radius);
    BinaryMask out(seg.height(), seg.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool fg = seg.values()[i] != 0;
        out.values()[i] = static_cast<std::uint8_t>(fg ? near_bg.values()[i] : near_fg.values()[i]);
    }
    return out;
}

BinaryMask fill_interior(const BinaryMask& edges) {
    require(is_binary(edges), ErrorKind::InvalidInput, "fill_interior: mask is not binary");
    const int h = edges.height();
    const int w = edges.width();
    BinaryMask reached(h, w, 0);
    std::deque<std::pair<int, int>> queue;
    auto seed = [&](int y, int x) {
        if (edges(y, x) == 0 && reached(y, x) == 0) {
            reached(y, x) = 1;
            queue.emplace_back(y, x);
        }
    };
    for (int x = 0; x < w; ++x) {
        seed(0, x);
        seed(h - 1, x);
    }
    for (int y = 0; y < h; ++y) {
        seed(y, 0);
        seed(y, w - 1);
    }
    while (!queue.empty()) {
        const auto [y, x] = queue.front();
        queue.pop_front();
        if (y > 0) seed(y - 1, x);
        if (y + 1 < h) seed(y + 1, x);
        if (x > 0) seed(y, x - 1);
        if (x + 1 < w) seed(y, x + 1);
    }
    BinaryMask out(h, w);
    std::transform(reached.values().begin(), reached.values().end(), out.values().begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(1 - v); });
    return out;
}

SoftMask downsample_avg(const SoftMask& mask, int factor) {
    require(factor >= 1, ErrorKind::InvalidInput,
            "downsample_avg: factor must be >= 1, got " + std::to_string(factor));
    require(mask.height() % factor == 0 && mask.width() % factor == 0, ErrorKind::InvalidInput,
            "downsample_avg: dimensions must be divisible by the factor (pad first)");
    const int oh = mask.height() / factor;
    const int ow = mask.width() / factor;
    const double area = static_cast<double>(factor) * factor;
    SoftMask out(oh, ow, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double sum = 0.0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                    sum += mask(y * factor + dy, x * factor + dx);
            out(y, x) = sum / area;
        }
    }
    return out;
}

Grid<double> resize_bilinear(const Grid<double>& grid, int target_height, int target_width) {
    require(!grid.empty(), ErrorKind::InvalidInput, "resize_bilinear: empty source");
    require(target_height >= 1 && target_width >= 1, ErrorKind::InvalidInput,
            "resize_bilinear: empty target");
    const int h = grid.height();
    const int w = grid.width();
    const double sy = target_height > 1 ? static_cast<double>(h - 1) / (target_height - 1) : 0.0;
    const double sx = target_width > 1 ? static_cast<double>(w - 1) / (target_width - 1) : 0.0;
    Grid<double> out(target_height, target_width);
    for (int y = 0; y < target_height; ++y) {
        const double fy = y * sy;
        const int y0 = std::min(static_cast<int>(fy), h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double ty = fy - y0;
        for (int x = 0; x < target_width; ++x) {
            const double fx = x * sx;
            const int x0 = std::min(static_cast<int>(fx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double tx = fx - x0;
            const double top = grid(y0, x0) + (grid(y0, x1) - grid(y0, x0)) * tx;
            const double bottom = grid(y1, x0) + (grid(y1, x1) - grid(y1, x0)) * tx;
            out(y, x) = top + (bottom - top) * ty;
        }
    }
    return out;
}

SoftMask upsample_bilinear(const SoftMask& mask, int target_height, int target_width) {
    require(target_height >= mask.height() && target_width >= mask.width(), ErrorKind::InvalidInput,
            "upsample_bilinear: target smaller than source");
    return resize_bilinear(mask, target_height, target_width);
}

Padded<Image> pad_to(const Image& image, int target_height, int target_width) {
    Padded<Image> out;
    out.valid = Rect{0, 0, image.height(), image.width()};
    for (const auto& plane : image.planes)
        out.value.planes.push_back(pad_to(plane, target_height, target_width).value);
    return out;
}

Image rotate90(const Image& image, int quarter_turns) {
    Image out;
    for (const auto& plane : image.planes)
        out.planes.push_back(rotate90(plane, quarter_turns));
    return out;
}

int round_up(int value, int multiple) {
    require(multiple >= 1, ErrorKind::InvalidInput, "round_up: multiple must be >= 1");
    return (value + multiple - 1) / multiple * multiple;
}

} // namespace cafenet::raster
