#pragma once

// Brute-force reference implementations. Each one follows the defining
// formula directly, with no shared code path with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cafenet/raster.hpp"

namespace oracle {

using cafenet::raster::BinaryMask;
using cafenet::raster::Grid;
using cafenet::raster::Rect;
using cafenet::raster::SoftMask;

inline SoftMask dilate(const SoftMask& m, int r) {
    SoftMask out(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            double best = -1.0;
            for (int qy = 0; qy < m.height(); ++qy)
                for (int qx = 0; qx < m.width(); ++qx)
                    if (std::abs(qy - y) <= r && std::abs(qx - x) <= r)
                        best = std::max(best, m(qy, qx));
            out(y, x) = best;
        }
    return out;
}

/// Every pair of pixels within Chebyshev distance ceil(t/2) carrying
/// different labels marks both pixels as boundary.
inline BinaryMask boundary(const BinaryMask& seg, int thickness) {
    const int r = (thickness + 1) / 2;
    BinaryMask out(seg.height(), seg.width(), 0);
    for (int ay = 0; ay < seg.height(); ++ay)
        for (int ax = 0; ax < seg.width(); ++ax)
            for (int by = 0; by < seg.height(); ++by)
                for (int bx = 0; bx < seg.width(); ++bx)
                    if (std::max(std::abs(ay - by), std::abs(ax - bx)) <= r && seg(ay, ax) != seg(by, bx)) {
                        out(ay, ax) = 1;
                        out(by, bx) = 1;
                    }
    return out;
}

/// Background reachability by repeated relaxation until a fixed point.
inline BinaryMask fill(const BinaryMask& edges) {
    const int h = edges.height(), w = edges.width();
    BinaryMask outside(h, w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((y == 0 || x == 0 || y == h - 1 || x == w - 1) && edges(y, x) == 0)
                outside(y, x) = 1;
    for (bool changed = true; changed;) {
        changed = false;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (outside(y, x) || edges(y, x)) continue;
                const bool touch = (y > 0 && outside(y - 1, x)) || (y + 1 < h && outside(y + 1, x)) ||
                                   (x > 0 && outside(y, x - 1)) || (x + 1 < w && outside(y, x + 1));
                if (touch) {
                    outside(y, x) = 1;
                    changed = true;
                }
            }
    }
    BinaryMask out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out(y, x) = static_cast<std::uint8_t>(1 - outside(y, x));
    return out;
}

inline SoftMask block_mean(const SoftMask& m, int f) {
    SoftMask out(m.height() / f, m.width() / f);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            out(y / f, x / f) += m(y, x) / (f * f);
    return out;
}

/// Corner-aligned bilinear: output pixel (y, x) samples source point
/// (y (h-1)/(H-1), x (w-1)/(W-1)) using the four-neighbour weights.
inline SoftMask bilinear(const SoftMask& m, int th, int tw) {
    SoftMask out(th, tw);
    for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) {
            const double sy = th == 1 ? 0.0 : static_cast<double>(y) * (m.height() - 1) / (th - 1);
            const double sx = tw == 1 ? 0.0 : static_cast<double>(x) * (m.width() - 1) / (tw - 1);
            double acc = 0.0;
            for (int qy = 0; qy < m.height(); ++qy)
                for (int qx = 0; qx < m.width(); ++qx) {
                    const double wy = std::max(0.0, 1.0 - std::abs(sy - qy));
                    const double wx = std::max(0.0, 1.0 - std::abs(sx - qx));
                    acc += wy * wx * m(qy, qx);
                }
            out(y, x) = acc;
        }
    return out;
}

/// Counter-clockwise quarter turns: source (y, x) lands at (w-1-x, y).
template <typename T>
Grid<T> rotate(const Grid<T>& g, int turns) {
    Grid<T> cur = g;
    for (int t = 0; t < turns; ++t) {
        Grid<T> next(cur.width(), cur.height());
        for (int y = 0; y < cur.height(); ++y)
            for (int x = 0; x < cur.width(); ++x)
                next(cur.width() - 1 - x, y) = cur(y, x);
        cur = next;
    }
    return cur;
}

/// feats[i][c][j], masks[i][j]; normalised by N_s * H * W.
inline std::vector<double> prototype(const std::vector<std::vector<std::vector<double>>>& feats,
                                     const std::vector<std::vector<double>>& masks, bool foreground) {
    const std::size_t channels = feats[0].size();
    const std::size_t pixels = masks[0].size();
    std::vector<double> p(channels, 0.0);
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t j = 0; j < pixels; ++j)
                p[c] += feats[i][c][j] * (foreground ? masks[i][j] : 1.0 - masks[i][j]);
    for (double& v : p)
        v /= static_cast<double>(feats.size() * pixels);
    return p;
}

inline long double sq_dist(const std::vector<double>& a, const std::vector<double>& b, std::size_t begin,
                           std::size_t end) {
    long double d = 0.0L;
    for (std::size_t c = begin; c < end; ++c)
        d += static_cast<long double>(a[c] - b[c]) * (a[c] - b[c]);
    return d;
}

/// exp(-tau d_fg) / (exp(-tau d_fg) + exp(-tau d_bg)) in extended precision
/// after subtracting the larger exponent.
inline double match(long double d_fg, long double d_bg, double tau) {
    const long double a = -tau * d_fg, b = -tau * d_bg;
    const long double top = std::max(a, b);
    const long double ea = std::exp(a - top), eb = std::exp(b - top);
    return static_cast<double>(ea / (ea + eb));
}

struct Counts {
    long tp = 0, fp = 0, fn = 0;
};

inline Counts confusion(const SoftMask& pred, const BinaryMask& gt, double t, const Rect& valid) {
    Counts c;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            const bool p = pred(y, x) > t;
            const bool inside = y >= valid.y && y < valid.y + valid.height && x >= valid.x &&
                                x < valid.x + valid.width;
            const bool g = inside && gt(y, x) != 0;
            if (p && g) ++c.tp;
            else if (p) ++c.fp;
            else if (g) ++c.fn;
        }
    return c;
}

/// AP with every distinct score as a threshold (positive iff score >= v),
/// swept from the highest score down, starting at recall 0.
inline double exhaustive_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> distinct = scores;
    std::sort(distinct.begin(), distinct.end(), std::greater<>());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    long positives = 0;
    for (int l : labels) positives += l;
    double ap = 0.0, prev_r = 0.0;
    for (double v : distinct) {
        long tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= v) (labels[i] ? tp : fp)++;
        const double p = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
        const double r = positives == 0 ? 0.0 : static_cast<double>(tp) / positives;
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    return ap;
}

} // namespace oracle
