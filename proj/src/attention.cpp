#include "ehrisk/attention.hpp"

#include "ehrisk/errors.hpp"

#include <cmath>

namespace ehrisk {

Matrix softmax_rows(const Matrix &scores) {
    Matrix out(scores.rows(), scores.cols());
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double max = scores.row(r).maxCoeff();
        out.row(r) = (scores.row(r).array() - max).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

Matrix attention_forward(const Matrix &x, const AttentionWeights &weights, std::size_t heads, AttentionTrace &trace) {
    const auto d = x.cols();
    if (heads == 0 || d % static_cast<Eigen::Index>(heads) != 0) {
        throw InvalidInputError("head count must divide the model width");
    }
    if (weights.query.rows() != d || weights.query.cols() != d || weights.output.rows() != d || weights.output.cols() != d) {
        throw InvalidInputError("attention weight shape does not match input width");
    }
    const auto head_dim = d / static_cast<Eigen::Index>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    trace.input = x;
    trace.queries = x * weights.query;
    trace.keys = x * weights.key;
    trace.values = x * weights.value;
    trace.mixed.resize(x.rows(), d);
    trace.probabilities.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h) * head_dim;
        const Matrix scores = trace.queries.middleCols(col, head_dim) * trace.keys.middleCols(col, head_dim).transpose() * scale;
        trace.probabilities[h] = softmax_rows(scores);
        trace.mixed.middleCols(col, head_dim) = trace.probabilities[h] * trace.values.middleCols(col, head_dim);
    }
    return x + trace.mixed * weights.output;
}

Matrix attention_backward(const AttentionTrace &trace, const Matrix &d_out, const AttentionWeights &weights, std::size_t heads, AttentionWeights &grad) {
    const auto d = trace.input.cols();
    const auto head_dim = d / static_cast<Eigen::Index>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    grad.output.noalias() += trace.mixed.transpose() * d_out;
    const Matrix d_mixed = d_out * weights.output.transpose();

    Matrix d_queries(trace.input.rows(), d);
    Matrix d_keys(trace.input.rows(), d);
    Matrix d_values(trace.input.rows(), d);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h) * head_dim;
        const Matrix &probs = trace.probabilities[h];
        const auto d_head = d_mixed.middleCols(col, head_dim);

        const Matrix d_probs = d_head * trace.values.middleCols(col, head_dim).transpose();
        d_values.middleCols(col, head_dim) = probs.transpose() * d_head;

        // softmax Jacobian, row by row: dS = P .* (dP - rowsum(dP .* P))
        const Eigen::VectorXd row_dot = (d_probs.array() * probs.array()).rowwise().sum();
        const Matrix d_scores = (probs.array() * (d_probs.array().colwise() - row_dot.array())).matrix() * scale;

        d_queries.middleCols(col, head_dim) = d_scores * trace.keys.middleCols(col, head_dim);
        d_keys.middleCols(col, head_dim) = d_scores.transpose() * trace.queries.middleCols(col, head_dim);
    }

    grad.query.noalias() += trace.input.transpose() * d_queries;
    grad.key.noalias() += trace.input.transpose() * d_keys;
    grad.value.noalias() += trace.input.transpose() * d_values;

    Matrix d_input = d_out;
    d_input.noalias() += d_queries * weights.query.transpose();
    d_input.noalias() += d_keys * weights.key.transpose();
    d_input.noalias() += d_values * weights.value.transpose();
    return d_input;
}

}  // namespace ehrisk
