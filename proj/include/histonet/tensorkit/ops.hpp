#pragma once

#include <span>
#include <vector>

#include "histonet/tensorkit/graph.hpp"
#include "histonet/tensorkit/rng.hpp"
#include "histonet/tensorkit/tensor.hpp"

// Differentiable operations. Each op computes its output eagerly and, when
// any input requires grad, records a backward rule on the graph. Inputs
// that do not require grad never receive gradient.
namespace histonet::tk::ops {

/// Stride-1 cross-correlation with symmetric zero padding.
/// input [Cin,H,W], kernel [Cout,Cin,kH,kW], bias [Cout] -> [Cout,H+2p-kH+1,W+2p-kW+1].
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t pad);

/// Zero padding on both spatial axes of a [C,H,W] tensor.
Tensor pad2d(Graph& g, const Tensor& input, std::size_t pad);

/// y = x for x > 0, slope * x otherwise (the negative branch owns x == 0).
Tensor leaky_relu(Graph& g, const Tensor& x, double slope);

/// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(Graph& g, const Tensor& x);

Tensor sigmoid(Graph& g, const Tensor& x);

/// Non-overlapping k x k max pooling; the gradient goes to the first
/// maximal cell of each window in row-major scan order.
Tensor max_pool2d(Graph& g, const Tensor& input, std::size_t k);

/// y = weight * x + bias for x [n], weight [m,n], bias [m].
Tensor dense(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b);

/// Channels [begin, end) of a [C,H,W] tensor.
Tensor slice_channels(Graph& g, const Tensor& x, std::size_t begin, std::size_t end);

/// Concatenation of rank-1 tensors.
Tensor concat(Graph& g, std::span<const Tensor> parts);

/// Inverted dropout: in training, zero with probability p and scale
/// survivors by 1/(1-p); identity otherwise.
Tensor dropout(Graph& g, const Tensor& x, double p, bool training, Rng& rng);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);

/// Rank-1 view (copy) of any tensor.
Tensor flatten(Graph& g, const Tensor& x);

/// Scalar sum of all elements.
Tensor sum(Graph& g, const Tensor& x);

/// Scalar sum_i coeffs[i] * terms[i] over one-element tensors.
Tensor weighted_sum(Graph& g, std::span<const Tensor> terms, std::span<const double> coeffs);

/// Scalar sum_i (x_i - target_i)^2; target is treated as a constant.
Tensor squared_error(Graph& g, const Tensor& x, const Tensor& target);

}  // namespace histonet::tk::ops
