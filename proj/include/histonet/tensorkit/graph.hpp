#pragma once

#include <functional>
#include <vector>

#include "histonet/tensorkit/tensor.hpp"

namespace histonet::tk {

/// Tape of applied operations for reverse-mode differentiation.
///
/// Ops append nodes in execution order, which is already a topological
/// order; backward() replays the backward rules in reverse. A graph is
/// single-use: a second backward() without a fresh forward is an error.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  /// True when any of `inputs` participates in differentiation. Ops use
  /// this to skip recording on pure-inference paths.
  static bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

  /// Appends a node. `output` is marked as requiring grad.
  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and runs every backward rule in reverse
  /// topological order. `root` must be a one-element tensor.
  void backward(Tensor root);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace histonet::tk
