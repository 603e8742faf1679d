#include "cafenet/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "cafenet/image_io.hpp"

namespace cafenet::plot {

namespace {

using Glyph = std::array<std::uint8_t, 7>; // rows, low 5 bits, MSB on the left

const std::map<char, Glyph>& font() {
    static const std::map<char, Glyph> glyphs = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'@', {0x0E, 0x11, 0x17, 0x15, 0x17, 0x10, 0x0F}},
    };
    return glyphs;
}

const std::array<Color, 6> kPalette = {{
    {214, 39, 40}, {31, 119, 180}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {23, 190, 207},
}};

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string upper(std::string s) {
    for (char& c : s)
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

} // namespace

Canvas::Canvas(int width, int height, Color background)
    : width_(width), height_(height), rgb_(static_cast<std::size_t>(width) * height * 3) {
    require(width > 0 && height > 0, ErrorKind::InvalidInput, "canvas must be non-empty");
    for (std::size_t i = 0; i < rgb_.size(); i += 3)
        std::copy(background.begin(), background.end(), rgb_.begin() + static_cast<long>(i));
}

void Canvas::set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    rgb_[i] = c[0];
    rgb_[i + 1] = c[1];
    rgb_[i + 2] = c[2];
}

Color Canvas::get(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void Canvas::line(double x0, double y0, double x1, double y1, Color c, int thickness) {
    const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
    const int r = thickness / 2;
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
                set(x + dx, y + dy, c);
    }
}

void Canvas::rect(int x0, int y0, int x1, int y1, Color c) {
    line(x0, y0, x1, y0, c);
    line(x1, y0, x1, y1, c);
    line(x1, y1, x0, y1, c);
    line(x0, y1, x0, y0, c);
}

void Canvas::text(int x, int y, const std::string& s, Color c, int scale) {
    const auto& glyphs = font();
    int cursor = x;
    for (char ch : s) {
        auto it = glyphs.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (it != glyphs.end())
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (it->second[row] & (0x10 >> col))
                        for (int dy = 0; dy < scale; ++dy)
                            for (int dx = 0; dx < scale; ++dx)
                                set(cursor + col * scale + dx, y + row * scale + dy, c);
        cursor += 6 * scale;
    }
}

void Canvas::save(const fs::path& path) const {
    io::write_png(path, io::RawImage{width_, height_, 3, rgb_});
}

void plot_pr(const fs::path& path, const std::vector<Series>& series) {
    require(!series.empty(), ErrorKind::EmptyInput, "plot_pr: nothing to plot");
    constexpr int kW = 640, kH = 620, kLeft = 70, kTop = 30, kSize = 440;
    Canvas canvas(kW, kH);
    const Color axis = {0, 0, 0}, grid = {220, 220, 220};
    auto px = [&](double r) { return kLeft + r * kSize; };
    auto py = [&](double p) { return kTop + (1.0 - p) * kSize; };
    for (int i = 0; i <= 10; ++i) {
        const double v = i / 10.0;
        canvas.line(px(v), py(0), px(v), py(1), grid);
        canvas.line(px(0), py(v), px(1), py(v), grid);
    }
    for (int i = 0; i <= 5; ++i) {
        const double v = i / 5.0;
        char buf[8];
        std::snprintf(buf, sizeof(buf), "%.1f", v);
        canvas.text(static_cast<int>(px(v)) - 8, static_cast<int>(py(0)) + 8, buf, axis);
        canvas.text(kLeft - 30, static_cast<int>(py(v)) - 3, buf, axis);
    }
    canvas.rect(static_cast<int>(px(0)), static_cast<int>(py(1)), static_cast<int>(px(1)),
                static_cast<int>(py(0)), axis);
    canvas.text(kLeft + kSize / 2 - 18, kTop + kSize + 24, "RECALL", axis);
    canvas.text(6, kTop - 18, "PRECISION", axis);

    for (std::size_t s = 0; s < series.size(); ++s) {
        const Color color = kPalette[s % kPalette.size()];
        const auto& pts = series[s].curve.points;
        for (std::size_t i = 1; i < pts.size(); ++i)
            canvas.line(px(pts[i - 1].recall), py(pts[i - 1].precision), px(pts[i].recall),
                        py(pts[i].precision), color, 2);
        const std::string label = upper(series[s].label) + " AP " +
                                  fixed4(evaluator::average_precision(series[s].curve)) + " MF " +
                                  fixed4(evaluator::mf_ods(series[s].curve));
        const int ly = kTop + kSize + 44 + static_cast<int>(s) * 12;
        canvas.line(kLeft, ly + 3, kLeft + 20, ly + 3, color, 2);
        canvas.text(kLeft + 28, ly, label, axis);
    }
    canvas.save(path);
}

void plot_overlay(const fs::path& path, const raster::Image& image, const raster::SoftMask& edge,
                  const raster::BinaryMask* ground_truth, double threshold) {
    require(image.channels() == 3 && image.height() == edge.height() && image.width() == edge.width(),
            ErrorKind::Shape, "overlay: image and edge map differ in size");
    require(!ground_truth || ground_truth->same_shape(edge), ErrorKind::Shape,
            "overlay: ground truth differs in size");
    Canvas canvas(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
            const bool predicted = edge(y, x) > threshold;
            const bool truth = ground_truth && (*ground_truth)(y, x) != 0;
            Color c;
            if (predicted && truth) c = {255, 220, 0};
            else if (predicted) c = {230, 30, 30};
            else if (truth) c = {30, 90, 255};
            else
                for (int ch = 0; ch < 3; ++ch)
                    c[ch] = static_cast<std::uint8_t>(
                        std::lround(std::clamp(image.planes[ch](y, x), 0.0, 1.0) * 160.0));
            canvas.set(x, y, c);
        }
    canvas.save(path);
}

} // namespace cafenet::plot
