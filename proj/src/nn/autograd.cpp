#include "cafenet/nn/autograd.hpp"

#include <unordered_set>

namespace cafenet::nn {

std::string Shape::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return node;
}

Var parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return node;
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const auto& in : inputs)
        node->requires_grad = node->requires_grad || (in && in->requires_grad);
    if (node->requires_grad) {
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return node;
}

void backward(const Var& root) {
    require(root && root->value.size() == 1, ErrorKind::Shape, "backward: root must be a scalar");
    if (!root->requires_grad)
        return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child && child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->has_grad())
            node->backward_fn(*node);
    }
}

double scalar(const Var& v) {
    require(v && v->value.size() == 1, ErrorKind::Shape, "scalar: node is not single-element");
    return v->value.data[0];
}

} // namespace cafenet::nn
