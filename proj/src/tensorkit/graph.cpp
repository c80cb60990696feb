#include "histonet/tensorkit/graph.hpp"

#include <stdexcept>

#include "histonet/errors.hpp"

namespace histonet::tk {

bool Graph::any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->requires_grad()) {
      return true;
    }
  }
  return false;
}

void Graph::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  if (consumed_) {
    throw std::logic_error("cannot record onto a graph after backward()");
  }
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(Tensor root) {
  if (consumed_) {
    throw std::logic_error("backward() called twice on the same graph");
  }
  if (root.size() != 1) {
    throw DimensionError("backward() root must be a scalar, got " + shape_string(root.shape()));
  }
  consumed_ = true;
  root.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    // Nodes whose output never received a gradient lie off the root's path.
    if (it->output.has_grad()) {
      it->backward();
    }
  }
  nodes_.clear();
}

}  // namespace histonet::tk
