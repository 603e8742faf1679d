#include "cafenet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace cafenet::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_same(const Shape& a, const Shape& b, const char* op) {
    require(a == b, ErrorKind::Shape,
            std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

struct ConvGeometry {
    int channels, height, width;
    int kh, kw;
    int out_h, out_w;
    ConvSpec spec;

    std::size_t rows() const { return static_cast<std::size_t>(channels) * kh * kw; }
    std::size_t cols() const { return static_cast<std::size_t>(out_h) * out_w; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
    const int s = g.spec.stride, p = g.spec.padding, d = g.spec.dilation;
    for (int c = 0; c < g.channels; ++c) {
        const double* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((static_cast<std::size_t>(c) * g.kh + ki) * g.kw + kj) * g.cols();
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * s - p + ki * d;
                    double* dst = row + static_cast<std::size_t>(oy) * g.out_w;
                    if (iy < 0 || iy >= g.height) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.width;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * s - p + kj * d;
                        dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
    const int s = g.spec.stride, p = g.spec.padding, d = g.spec.dilation;
    for (int c = 0; c < g.channels; ++c) {
        double* plane = dx + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const double* row =
                    col + ((static_cast<std::size_t>(c) * g.kh + ki) * g.kw + kj) * g.cols();
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * s - p + ki * d;
                    if (iy < 0 || iy >= g.height)
                        continue;
                    const double* src = row + static_cast<std::size_t>(oy) * g.out_w;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.width;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * s - p + kj * d;
                        if (ix >= 0 && ix < g.width)
                            dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Precomputed corner-aligned interpolation taps along one axis.
struct Taps {
    std::vector<int> lo, hi;
    std::vector<double> t;
};

Taps bilinear_taps(int in, int out) {
    Taps taps;
    taps.lo.resize(out);
    taps.hi.resize(out);
    taps.t.resize(out);
    const double scale = out > 1 ? static_cast<double>(in - 1) / (out - 1) : 0.0;
    for (int i = 0; i < out; ++i) {
        const double f = i * scale;
        const int lo = std::min(static_cast<int>(f), in - 1);
        taps.lo[i] = lo;
        taps.hi[i] = std::min(lo + 1, in - 1);
        taps.t[i] = f - lo;
    }
    return taps;
}

double stable_sigmoid(double z) {
    if (z >= 0.0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

} // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec) {
    const Shape xs = x->shape();
    const Shape ws = weight->shape();
    require(ws.c == xs.c, ErrorKind::Shape,
            "conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
    require(spec.stride >= 1 && spec.dilation >= 1 && spec.padding >= 0, ErrorKind::InvalidInput,
            "conv2d: invalid stride/dilation/padding");
    ConvGeometry g{xs.c, xs.h, xs.w, ws.h, ws.w, 0, 0, spec};
    g.out_h = (xs.h + 2 * spec.padding - spec.dilation * (ws.h - 1) - 1) / spec.stride + 1;
    g.out_w = (xs.w + 2 * spec.padding - spec.dilation * (ws.w - 1) - 1) / spec.stride + 1;
    require(g.out_h >= 1 && g.out_w >= 1, ErrorKind::Shape, "conv2d: output would be empty");
    if (bias)
        require(bias->shape().numel() == static_cast<std::size_t>(ws.n), ErrorKind::Shape,
                "conv2d: bias size mismatch");

    const bool direct = ws.h == 1 && ws.w == 1 && spec.stride == 1 && spec.padding == 0;
    const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
    const std::size_t out_stride = static_cast<std::size_t>(ws.n) * g.cols();
    auto cols = std::make_shared<std::vector<double>>(direct ? 0 : xs.n * g.rows() * g.cols());

    Tensor out(Shape{xs.n, ws.n, g.out_h, g.out_w});
    ConstMatrixMap wm(weight->value.data.data(), ws.n, static_cast<Eigen::Index>(g.rows()));
    for (int n = 0; n < xs.n; ++n) {
        const double* col = x->value.data.data() + n * in_stride;
        if (!direct) {
            double* buf = cols->data() + n * g.rows() * g.cols();
            im2col(col, g, buf);
            col = buf;
        }
        ConstMatrixMap cm(col, static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
        MatrixMap ym(out.data.data() + n * out_stride, ws.n, static_cast<Eigen::Index>(g.cols()));
        ym.noalias() = wm * cm;
        if (bias) {
            for (int o = 0; o < ws.n; ++o)
                ym.row(o).array() += bias->value.data[o];
        }
    }

    std::vector<Var> inputs{x, weight};
    if (bias)
        inputs.push_back(bias);
    return make_node(std::move(out), std::move(inputs),
                     [g, direct, cols, in_stride, out_stride, xs, ws](Node& self) {
        const Var& xin = self.inputs[0];
        const Var& win = self.inputs[1];
        const Var bin = self.inputs.size() > 2 ? self.inputs[2] : nullptr;
        ConstMatrixMap wm(win->value.data.data(), ws.n, static_cast<Eigen::Index>(g.rows()));
        std::vector<double> dcol(xin->requires_grad && !direct ? g.rows() * g.cols() : 0);
        for (int n = 0; n < xs.n; ++n) {
            ConstMatrixMap dy(self.grad.data() + n * out_stride, ws.n, static_cast<Eigen::Index>(g.cols()));
            const double* col = direct ? xin->value.data.data() + n * in_stride
                                       : cols->data() + n * g.rows() * g.cols();
            ConstMatrixMap cm(col, static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
            if (win->requires_grad) {
                MatrixMap dw(win->grad_buffer().data(), ws.n, static_cast<Eigen::Index>(g.rows()));
                dw.noalias() += dy * cm.transpose();
            }
            if (bin && bin->requires_grad) {
                auto& db = bin->grad_buffer();
                for (int o = 0; o < ws.n; ++o)
                    db[o] += dy.row(o).sum();
            }
            if (xin->requires_grad) {
                double* dx = xin->grad_buffer().data() + n * in_stride;
                if (direct) {
                    MatrixMap dxm(dx, static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
                    dxm.noalias() += wm.transpose() * dy;
                } else {
                    MatrixMap dc(dcol.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
                    dc.noalias() = wm.transpose() * dy;
                    col2im_add(dcol.data(), g, dx);
                }
            }
        }
    });
}

Var channel_affine(const Var& x, const Var& gamma, const Var& beta) {
    const Shape s = x->shape();
    require(gamma->shape().numel() == static_cast<std::size_t>(s.c) &&
                beta->shape().numel() == static_cast<std::size_t>(s.c),
            ErrorKind::Shape, "channel_affine: parameter size mismatch");
    Tensor out(s);
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            const double g = gamma->value.data[c], b = beta->value.data[c];
            for (std::size_t i = 0; i < plane; ++i)
                out.data[base + i] = x->value.data[base + i] * g + b;
        }
    return make_node(std::move(out), {x, gamma, beta}, [s, plane](Node& self) {
        const Var& xin = self.inputs[0];
        const Var& g = self.inputs[1];
        const Var& b = self.inputs[2];
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                double sg = 0.0, sb = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double dy = self.grad[base + i];
                    sg += dy * xin->value.data[base + i];
                    sb += dy;
                }
                if (g->requires_grad) g->grad_buffer()[c] += sg;
                if (b->requires_grad) b->grad_buffer()[c] += sb;
                if (xin->requires_grad) {
                    auto& dx = xin->grad_buffer();
                    const double gv = g->value.data[c];
                    for (std::size_t i = 0; i < plane; ++i)
                        dx[base + i] += self.grad[base + i] * gv;
                }
            }
    });
}

Var relu(const Var& x) {
    Tensor out(x->shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = std::max(0.0, x->value.data[i]);
    return make_node(std::move(out), {x}, [](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (self.value.data[i] > 0.0)
                dx[i] += self.grad[i];
    });
}

Var sigmoid(const Var& x) {
    Tensor out(x->shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = stable_sigmoid(x->value.data[i]);
    return make_node(std::move(out), {x}, [](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double p = self.value.data[i];
            dx[i] += self.grad[i] * p * (1.0 - p);
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same(a->shape(), b->shape(), "add");
    Tensor out(a->shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = a->value.data[i] + b->value.data[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        for (const Var& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& d = in->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a->shape(), b->shape(), "sub");
    Tensor out(a->shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = a->value.data[i] - b->value.data[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        if (self.inputs[0]->requires_grad) {
            auto& d = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& d = self.inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
        }
    });
}

Var add_scalar(const Var& x, double s) {
    Tensor out(x->shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = x->value.data[i] + s;
    return make_node(std::move(out), {x}, [](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] += self.grad[i];
    });
}

Var scale(const Var& x, double s) {
    Tensor out(x->shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = x->value.data[i] * s;
    return make_node(std::move(out), {x}, [s](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] += self.grad[i] * s;
    });
}

Var max_pool2d(const Var& x, int kernel, int stride, int padding) {
    const Shape s = x->shape();
    require(kernel >= 1 && stride >= 1 && padding >= 0 && padding < kernel, ErrorKind::InvalidInput,
            "max_pool2d: invalid geometry");
    const int oh = (s.h + 2 * padding - kernel) / stride + 1;
    const int ow = (s.w + 2 * padding - kernel) / stride + 1;
    Tensor out(Shape{s.n, s.c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    std::size_t o = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_i = base;
                    for (int ky = 0; ky < kernel; ++ky) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= s.h) continue;
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= s.w) continue;
                            const std::size_t idx = base + static_cast<std::size_t>(iy) * s.w + ix;
                            if (x->value.data[idx] > best) {
                                best = x->value.data[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.data[o] = best;
                    (*argmax)[o] = best_i;
                }
        }
    return make_node(std::move(out), {x}, [argmax](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            dx[(*argmax)[i]] += self.grad[i];
    });
}

Var concat_channels(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::InvalidInput, "concat_channels: no inputs");
    const Shape first = parts.front()->shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape s = p->shape();
        require(s.n == first.n && s.h == first.h && s.w == first.w, ErrorKind::Shape,
                "concat_channels: spatial/batch mismatch " + s.str() + " vs " + first.str());
        channels += s.c;
    }
    const Shape os{first.n, channels, first.h, first.w};
    Tensor out(os);
    const std::size_t plane = os.plane();
    for (int n = 0; n < os.n; ++n) {
        int offset = 0;
        for (const auto& p : parts) {
            const std::size_t len = static_cast<std::size_t>(p->shape().c) * plane;
            std::copy_n(p->value.data.begin() + n * len, len,
                        out.data.begin() + (static_cast<std::size_t>(n) * channels + offset) * plane);
            offset += p->shape().c;
        }
    }
    return make_node(std::move(out), parts, [os, plane](Node& self) {
        for (int n = 0; n < os.n; ++n) {
            int offset = 0;
            for (const auto& p : self.inputs) {
                const std::size_t len = static_cast<std::size_t>(p->shape().c) * plane;
                if (p->requires_grad) {
                    auto& d = p->grad_buffer();
                    const double* src =
                        self.grad.data() + (static_cast<std::size_t>(n) * os.c + offset) * plane;
                    for (std::size_t i = 0; i < len; ++i)
                        d[n * len + i] += src[i];
                }
                offset += p->shape().c;
            }
        }
    });
}

Var slice_channels(const Var& x, int begin, int end) {
    const Shape s = x->shape();
    require(0 <= begin && begin < end && end <= s.c, ErrorKind::Shape, "slice_channels: bad range");
    const Shape os{s.n, end - begin, s.h, s.w};
    Tensor out(os);
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        std::copy_n(x->value.data.begin() + (static_cast<std::size_t>(n) * s.c + begin) * plane,
                    os.c * plane, out.data.begin() + static_cast<std::size_t>(n) * os.c * plane);
    return make_node(std::move(out), {x}, [s, os, begin, plane](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (int n = 0; n < s.n; ++n) {
            const std::size_t dst = (static_cast<std::size_t>(n) * s.c + begin) * plane;
            const std::size_t src = static_cast<std::size_t>(n) * os.c * plane;
            for (std::size_t i = 0; i < os.c * plane; ++i)
                dx[dst + i] += self.grad[src + i];
        }
    });
}

Var resize_bilinear(const Var& x, int height, int width) {
    const Shape s = x->shape();
    require(height >= 1 && width >= 1, ErrorKind::InvalidInput, "resize_bilinear: empty target");
    if (height == s.h && width == s.w)
        return x;
    const Taps ty = bilinear_taps(s.h, height);
    const Taps tx = bilinear_taps(s.w, width);
    const Shape os{s.n, s.c, height, width};
    Tensor out(os);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
        const double* in = x->value.data.data() + static_cast<std::size_t>(nc) * s.plane();
        double* o = out.data.data() + static_cast<std::size_t>(nc) * os.plane();
        for (int y = 0; y < height; ++y) {
            const double* r0 = in + static_cast<std::size_t>(ty.lo[y]) * s.w;
            const double* r1 = in + static_cast<std::size_t>(ty.hi[y]) * s.w;
            const double wy = ty.t[y];
            for (int xx = 0; xx < width; ++xx) {
                const int a = tx.lo[xx], b = tx.hi[xx];
                const double wx = tx.t[xx];
                const double top = r0[a] + (r0[b] - r0[a]) * wx;
                const double bot = r1[a] + (r1[b] - r1[a]) * wx;
                o[static_cast<std::size_t>(y) * width + xx] = top + (bot - top) * wy;
            }
        }
    }
    return make_node(std::move(out), {x}, [s, os, ty, tx](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (int nc = 0; nc < s.n * s.c; ++nc) {
            double* din = dx.data() + static_cast<std::size_t>(nc) * s.plane();
            const double* g = self.grad.data() + static_cast<std::size_t>(nc) * os.plane();
            for (int y = 0; y < os.h; ++y) {
                double* r0 = din + static_cast<std::size_t>(ty.lo[y]) * s.w;
                double* r1 = din + static_cast<std::size_t>(ty.hi[y]) * s.w;
                const double wy = ty.t[y];
                for (int xx = 0; xx < os.w; ++xx) {
                    const double gv = g[static_cast<std::size_t>(y) * os.w + xx];
                    const int a = tx.lo[xx], b = tx.hi[xx];
                    const double wx = tx.t[xx];
                    r0[a] += gv * (1 - wy) * (1 - wx);
                    r0[b] += gv * (1 - wy) * wx;
                    r1[a] += gv * wy * (1 - wx);
                    r1[b] += gv * wy * wx;
                }
            }
        }
    });
}

Var mul_map(const Var& x, const Var& map) {
    const Shape s = x->shape();
    const Shape ms = map->shape();
    require(ms.n == s.n && ms.c == 1 && ms.h == s.h && ms.w == s.w, ErrorKind::Shape,
            "mul_map: map " + ms.str() + " incompatible with features " + s.str());
    Tensor out(s);
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            const std::size_t mb = static_cast<std::size_t>(n) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                out.data[base + i] = x->value.data[base + i] * map->value.data[mb + i];
        }
    return make_node(std::move(out), {x, map}, [s, plane](Node& self) {
        const Var& xin = self.inputs[0];
        const Var& m = self.inputs[1];
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                const std::size_t mb = static_cast<std::size_t>(n) * plane;
                if (xin->requires_grad) {
                    auto& dx = xin->grad_buffer();
                    for (std::size_t i = 0; i < plane; ++i)
                        dx[base + i] += self.grad[base + i] * m->value.data[mb + i];
                }
                if (m->requires_grad) {
                    auto& dm = m->grad_buffer();
                    for (std::size_t i = 0; i < plane; ++i)
                        dm[mb + i] += self.grad[base + i] * xin->value.data[base + i];
                }
            }
    });
}

Var threshold_keep(const Var& x, double lambda) {
    Tensor out(x->shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = x->value.data[i] > lambda ? x->value.data[i] : 0.0;
    return make_node(std::move(out), {x}, [lambda](Node& self) {
        const Var& xin = self.inputs[0];
        auto& dx = xin->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (xin->value.data[i] > lambda)
                dx[i] += self.grad[i];
    });
}

Var dilate_max(const Var& x, int radius) {
    require(radius >= 1, ErrorKind::InvalidInput, "dilate_max: radius must be >= 1");
    const Shape s = x->shape();
    Tensor out(s);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (int nc = 0; nc < s.n * s.c; ++nc) {
        const std::size_t base = static_cast<std::size_t>(nc) * s.plane();
        for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx) {
                std::size_t best_i = base + static_cast<std::size_t>(y) * s.w + xx;
                double best = x->value.data[best_i];
                for (int yy = std::max(0, y - radius); yy <= std::min(s.h - 1, y + radius); ++yy)
                    for (int xw = std::max(0, xx - radius); xw <= std::min(s.w - 1, xx + radius); ++xw) {
                        const std::size_t idx = base + static_cast<std::size_t>(yy) * s.w + xw;
                        if (x->value.data[idx] > best) {
                            best = x->value.data[idx];
                            best_i = idx;
                        }
                    }
                const std::size_t o = base + static_cast<std::size_t>(y) * s.w + xx;
                out.data[o] = best;
                (*argmax)[o] = best_i;
            }
    }
    return make_node(std::move(out), {x}, [argmax](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            dx[(*argmax)[i]] += self.grad[i];
    });
}

Var average(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::InvalidInput, "average: no inputs");
    Tensor out(parts.front()->shape());
    for (const auto& p : parts) {
        require_same(p->shape(), out.shape, "average");
        for (std::size_t i = 0; i < out.size(); ++i)
            out.data[i] += p->value.data[i];
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    for (double& v : out.data)
        v *= inv;
    return make_node(std::move(out), parts, [inv](Node& self) {
        for (const auto& p : self.inputs) {
            if (!p->requires_grad) continue;
            auto& d = p->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += self.grad[i] * inv;
        }
    });
}

Var sum_all(const Var& x) {
    double total = 0.0;
    for (double v : x->value.data)
        total += v;
    return make_node(Tensor(Shape{}, total), {x}, [](Node& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        for (double& d : dx)
            d += self.grad[0];
    });
}

Var sum_scalars(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::InvalidInput, "sum_scalars: no inputs");
    double total = 0.0;
    for (const auto& p : parts)
        total += scalar(p);
    return make_node(Tensor(Shape{}, total), parts, [](Node& self) {
        for (const auto& p : self.inputs)
            if (p->requires_grad)
                p->grad_buffer()[0] += self.grad[0];
    });
}

Var masked_pool(const std::vector<Var>& features, const std::vector<Tensor>& masks,
                bool by_mask_sum) {
    require(!features.empty(), ErrorKind::InvalidInput, "masked_pool: need at least one support");
    require(features.size() == masks.size(), ErrorKind::Shape,
            "masked_pool: feature/mask count mismatch");
    const Shape fs = features.front()->shape();
    double weight_total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const Shape s = features[i]->shape();
        require(s == fs && s.n == 1, ErrorKind::Shape, "masked_pool: feature shape mismatch");
        const Shape ms = masks[i].shape;
        require(ms.n == 1 && ms.c == 1 && ms.h == s.h && ms.w == s.w, ErrorKind::Shape,
                "masked_pool: mask " + ms.str() + " does not match feature " + s.str());
        for (double m : masks[i].data)
            weight_total += m;
    }
    const double norm = by_mask_sum ? std::max(weight_total, 1e-12)
                                    : static_cast<double>(features.size()) * fs.plane();
    Tensor out(Shape{1, fs.c, 1, 1});
    const std::size_t plane = fs.plane();
    for (std::size_t i = 0; i < features.size(); ++i)
        for (int c = 0; c < fs.c; ++c) {
            const double* f = features[i]->value.data.data() + c * plane;
            double acc = 0.0;
            for (std::size_t j = 0; j < plane; ++j)
                acc += f[j] * masks[i].data[j];
            out.data[c] += acc;
        }
    for (double& v : out.data)
        v /= norm;
    auto mask_copy = std::make_shared<std::vector<Tensor>>(masks);
    return make_node(std::move(out), features, [mask_copy, norm, fs, plane](Node& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            const Var& f = self.inputs[i];
            if (!f->requires_grad) continue;
            auto& d = f->grad_buffer();
            const auto& m = (*mask_copy)[i].data;
            for (int c = 0; c < fs.c; ++c) {
                const double g = self.grad[c] / norm;
                for (std::size_t j = 0; j < plane; ++j)
                    d[c * plane + j] += g * m[j];
            }
        }
    });
}

Var squared_distance(const Var& feature, const Var& proto, int begin, int end) {
    const Shape s = feature->shape();
    require(s.n == 1, ErrorKind::Shape, "squared_distance: expects a single feature map");
    require(proto->shape().numel() == static_cast<std::size_t>(s.c), ErrorKind::Shape,
            "squared_distance: prototype size mismatch");
    require(0 <= begin && begin < end && end <= s.c, ErrorKind::Shape,
            "squared_distance: bad channel range");
    const std::size_t plane = s.plane();
    Tensor out(Shape{1, 1, s.h, s.w});
    for (int c = begin; c < end; ++c) {
        const double* f = feature->value.data.data() + c * plane;
        const double p = proto->value.data[c];
        for (std::size_t j = 0; j < plane; ++j) {
            const double diff = f[j] - p;
            out.data[j] += diff * diff;
        }
    }
    return make_node(std::move(out), {feature, proto}, [begin, end, plane](Node& self) {
        const Var& f = self.inputs[0];
        const Var& p = self.inputs[1];
        for (int c = begin; c < end; ++c) {
            const double* fv = f->value.data.data() + c * plane;
            const double pv = p->value.data[c];
            double dp = 0.0;
            if (f->requires_grad) {
                auto& df = f->grad_buffer();
                for (std::size_t j = 0; j < plane; ++j)
                    df[c * plane + j] += 2.0 * (fv[j] - pv) * self.grad[j];
            }
            for (std::size_t j = 0; j < plane; ++j)
                dp -= 2.0 * (fv[j] - pv) * self.grad[j];
            if (p->requires_grad)
                p->grad_buffer()[c] += dp;
        }
    });
}

Var match_probability(const Var& d_fg, const Var& d_bg, const Var& tau) {
    require_same(d_fg->shape(), d_bg->shape(), "match_probability");
    require(tau->shape().numel() == 1, ErrorKind::Shape, "match_probability: tau must be scalar");
    const double t = tau->value.data[0];
    require(t > 0.0, ErrorKind::Config, "match_probability: tau must be positive");
    Tensor out(d_fg->shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double a = d_fg->value.data[i], b = d_bg->value.data[i];
        require(std::isfinite(a) && std::isfinite(b), ErrorKind::Numeric,
                "match_probability: non-finite feature distance");
        out.data[i] = stable_sigmoid(t * (b - a));
    }
    return make_node(std::move(out), {d_fg, d_bg, tau}, [t](Node& self) {
        const Var& fg = self.inputs[0];
        const Var& bg = self.inputs[1];
        const Var& tv = self.inputs[2];
        double dtau = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double p = self.value.data[i];
            const double dz = self.grad[i] * p * (1.0 - p);
            if (fg->requires_grad) fg->grad_buffer()[i] -= dz * t;
            if (bg->requires_grad) bg->grad_buffer()[i] += dz * t;
            dtau += dz * (bg->value.data[i] - fg->value.data[i]);
        }
        if (tv->requires_grad)
            tv->grad_buffer()[0] += dtau;
    });
}

} // namespace cafenet::nn
