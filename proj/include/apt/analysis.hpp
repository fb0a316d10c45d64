#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "apt/types.hpp"

namespace apt {

double accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels);

/// 2ab / (a + b).
double harmonic_mean(double base_acc, double new_acc);

// Both variance statistics are mean squared deviations divided by the
// feature dimension, so they read as per-dimension variances.

/// mean over classes c of mean_{x in c} ||x - mu_c||^2 / d.
double intra_class_variance(const Matrix& features, std::span<const std::uint32_t> labels,
                            std::size_t num_classes = 0);

/// mean over classes c of ||mu_c - mean_c(mu_c)||^2 / d.
double inter_class_variance(const Matrix& features, std::span<const std::uint32_t> labels,
                            std::size_t num_classes = 0);

struct VarianceStats {
    double intra_class = 0.0;
    double inter_class = 0.0;
    std::vector<double> per_class_intra;  // indexed by class id
    std::size_t num_classes = 0;          // classes with at least one sample
};

/// With num_classes = 0 the classes are the distinct labels present;
/// otherwise every class in [0, num_classes) must have a sample (EmptyClass).
VarianceStats variance_stats(const Matrix& features, std::span<const std::uint32_t> labels,
                             std::size_t num_classes = 0);

}  // namespace apt
