#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "apt/types.hpp"

namespace apt {

/// Softmax over temperature-scaled cosine logits.
struct ProbVector {
    Vector probs;
    double tau = 0.01;

    std::size_t size() const { return static_cast<std::size_t>(probs.size()); }
    double operator[](std::size_t i) const { return probs(static_cast<Eigen::Index>(i)); }
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const RowVector& a, const RowVector& b);

/// cos(w_i, z) for every row of `rows`.
Vector cosine_logits(const Matrix& rows, const RowVector& z);

/// Max-subtracted softmax of logits / tau.
ProbVector softmax_with_temperature(const Vector& cosines, double tau);

/// p_i = exp(cos(w_i, z)/tau) / sum_j exp(cos(w_j, z)/tau).
ProbVector class_probabilities(const Matrix& rows, const RowVector& z, double tau);

/// Index of the largest entry; ties go to the lowest index.
std::uint32_t argmax(const Vector& values);

std::pair<std::uint32_t, ProbVector> zero_shot_predict(const Matrix& text, const RowVector& z, double tau);

struct LossGrad {
    double loss = 0.0;
    Vector d_cos;  // gradient of the loss w.r.t. the cosine logits
};

/// Cross-entropy -log p_label and its gradient (p - onehot) / tau.
LossGrad loss_and_grad(const ProbVector& probs, std::uint32_t label);

/// Chains d_cos through cos(w_i, z) to a gradient on the rows.
Matrix cosine_rows_backward(const Matrix& rows, const RowVector& z, const Vector& d_cos);

}  // namespace apt
