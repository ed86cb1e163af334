#pragma once

#include "ehrisk/tensor.hpp"

#include <cstddef>
#include <vector>

namespace ehrisk {

/// Projection matrices of one multi-head self-attention layer, each d x d.
/// Head h owns columns [h*d/H, (h+1)*d/H) of the query/key/value projections
/// and the matching rows of `output`.
struct AttentionWeights {
    Matrix query;
    Matrix key;
    Matrix value;
    Matrix output;
};

/// Intermediates kept by the forward pass for backpropagation and inspection.
struct AttentionTrace {
    Matrix input;
    Matrix queries;
    Matrix keys;
    Matrix values;
    Matrix mixed;  ///< concatenated per-head outputs, before the output projection
    std::vector<Matrix> probabilities;  ///< one n x n row-stochastic matrix per head
};

/// Row-wise numerically stable softmax.
Matrix softmax_rows(const Matrix &scores);

/// Residual multi-head scaled dot-product self-attention:
/// returns x + concat_h(softmax(Q_h K_h^T / sqrt(d/H)) V_h) * W_o.
Matrix attention_forward(const Matrix &x, const AttentionWeights &weights, std::size_t heads, AttentionTrace &trace);

/// Accumulates weight gradients into `grad` and returns the gradient with respect to the input.
Matrix attention_backward(const AttentionTrace &trace, const Matrix &d_out, const AttentionWeights &weights, std::size_t heads, AttentionWeights &grad);

}  // namespace ehrisk
