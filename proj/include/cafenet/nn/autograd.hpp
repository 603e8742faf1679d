#pragma once

// Minimal reverse-mode automatic differentiation over dense NCHW float64
// tensors. A forward pass records a graph of Nodes; `backward` walks it in
// reverse topological order and accumulates gradients into every node that
// requires them. Parameters are long-lived leaf nodes; intermediate nodes die
// with the last Var referring to them.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cafenet/error.hpp"

namespace cafenet::nn {

struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
    std::string str() const;
    friend bool operator==(const Shape&, const Shape&) = default;
};

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.numel(), fill) {}
    Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
        require(data.size() == shape.numel(), ErrorKind::Shape, "tensor data does not match shape");
    }

    double& at(int n, int c, int y, int x) {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x];
    }
    double at(int n, int c, int y, int x) const {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x];
    }
    std::size_t size() const noexcept { return data.size(); }
};

struct Node {
    Tensor value;
    std::vector<double> grad; // empty until first accumulation
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;

    const Shape& shape() const noexcept { return value.shape; }
    std::vector<double>& grad_buffer() {
        if (grad.size() != value.data.size())
            grad.assign(value.data.size(), 0.0);
        return grad;
    }
    bool has_grad() const noexcept { return !grad.empty(); }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

/// Builds an op node. `backward_fn` is attached only when some input needs gradients.
Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

/// Seeds d(root)/d(root) = 1 for a single-element root and back-propagates.
void backward(const Var& root);

double scalar(const Var& v);

} // namespace cafenet::nn
