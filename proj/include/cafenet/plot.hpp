#pragma once

// Static figure output: PR curves and qualitative overlays, written as PNG.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cafenet/evaluator.hpp"
#include "cafenet/raster.hpp"

namespace cafenet::plot {

namespace fs = std::filesystem;

using Color = std::array<std::uint8_t, 3>;

class Canvas {
public:
    Canvas(int width, int height, Color background = {255, 255, 255});

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    void set(int x, int y, Color c);
    Color get(int x, int y) const;
    void line(double x0, double y0, double x1, double y1, Color c, int thickness = 1);
    void rect(int x0, int y0, int x1, int y1, Color c);
    /// Upper-case 5x7 glyphs; unsupported characters render as blanks.
    void text(int x, int y, const std::string& s, Color c, int scale = 1);
    void save(const fs::path& path) const;

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> rgb_;
};

struct Series {
    std::string label;
    evaluator::PRCurve curve;
};

void plot_pr(const fs::path& path, const std::vector<Series>& series);

/// Query image with ground-truth edges (blue), predicted edges (red) and
/// their overlap (yellow).
void plot_overlay(const fs::path& path, const raster::Image& image, const raster::SoftMask& edge,
                  const raster::BinaryMask* ground_truth, double threshold);

} // namespace cafenet::plot
