#pragma once

// Differentiable operations used by the edge detector. Each op returns a new
// graph node; gradients flow to every input that requires them.

#include <vector>

#include "cafenet/nn/autograd.hpp"

namespace cafenet::nn {

struct ConvSpec {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

/// x: [N,C,H,W], weight: [O,C,k,k], bias: [1,O,1,1] or null.
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec = {});

/// Per-channel scale and shift; gamma/beta: [1,C,1,1].
Var channel_affine(const Var& x, const Var& gamma, const Var& beta);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var add_scalar(const Var& x, double s);
Var scale(const Var& x, double s);
Var sub(const Var& a, const Var& b);

Var max_pool2d(const Var& x, int kernel, int stride, int padding);

Var concat_channels(const std::vector<Var>& parts);
/// Channels [begin, end) of x.
Var slice_channels(const Var& x, int begin, int end);

/// Corner-aligned bilinear resize of the spatial dims.
Var resize_bilinear(const Var& x, int height, int width);

/// x[n,c,y,x] * map[n,0,y,x].
Var mul_map(const Var& x, const Var& map);

/// x * 1(x > lambda).
Var threshold_keep(const Var& x, double lambda);

/// Stride-1 max over a (2r+1)^2 window clipped at the borders.
Var dilate_max(const Var& x, int radius);

/// Element-wise mean of same-shaped tensors.
Var average(const std::vector<Var>& parts);

/// sum over all elements.
Var sum_all(const Var& x);

/// Sum of single-element nodes.
Var sum_scalars(const std::vector<Var>& parts);

/// Mask-weighted pooling of support features into a [1,C,1,1] vector.
/// features[i]: [1,C,H,W]; masks[i]: [1,1,H,W] constant weights.
/// Normalised by count * H * W, or by the total mask weight when
/// `by_mask_sum` is set.
Var masked_pool(const std::vector<Var>& features, const std::vector<Tensor>& masks,
                bool by_mask_sum);

/// Squared Euclidean distance between each pixel's channel slice
/// [begin,end) of `feature` ([1,C,H,W]) and the same slice of `proto`.
Var squared_distance(const Var& feature, const Var& proto, int begin, int end);

/// exp(-tau d_fg) / (exp(-tau d_fg) + exp(-tau d_bg)) evaluated as
/// sigmoid(tau (d_bg - d_fg)). tau: [1,1,1,1].
Var match_probability(const Var& d_fg, const Var& d_bg, const Var& tau);

} // namespace cafenet::nn
