#include "apt/analysis.hpp"

#include <cmath>
#include <map>

#include "apt/errors.hpp"

namespace apt {

namespace {

struct ClassMoments {
    std::map<std::uint32_t, RowVector> sums;
    std::map<std::uint32_t, std::size_t> counts;
};

ClassMoments class_moments(const Matrix& features, std::span<const std::uint32_t> labels,
                           std::size_t num_classes) {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
        throw LengthMismatch("features have " + std::to_string(features.rows()) + " rows but " +
                             std::to_string(labels.size()) + " labels were given");
    }
    if (labels.empty()) {
        throw EmptyClass("no samples");
    }
    ClassMoments m;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = m.sums.try_emplace(labels[i], RowVector::Zero(features.cols()));
        it->second += features.row(static_cast<Eigen::Index>(i));
        ++m.counts[labels[i]];
    }
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        if (!m.counts.contains(c)) {
            throw EmptyClass("class " + std::to_string(c) + " has no samples");
        }
    }
    if (num_classes > 0 && m.counts.rbegin()->first >= num_classes) {
        throw LengthMismatch("label " + std::to_string(m.counts.rbegin()->first) + " outside [0, " +
                             std::to_string(num_classes) + ")");
    }
    return m;
}

}  // namespace

double accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels) {
    if (predictions.size() != labels.size()) {
        throw LengthMismatch(std::to_string(predictions.size()) + " predictions vs " +
                             std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) {
        throw LengthMismatch("accuracy of an empty list");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += predictions[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double harmonic_mean(double base_acc, double new_acc) {
    if (base_acc < 0.0 || new_acc < 0.0) {
        throw InvalidSpec("accuracies must be non-negative");
    }
    if (base_acc == 0.0 && new_acc == 0.0) {
        throw BothZero("harmonic mean of two zeros");
    }
    return 2.0 * base_acc * new_acc / (base_acc + new_acc);
}

VarianceStats variance_stats(const Matrix& features, std::span<const std::uint32_t> labels,
                             std::size_t num_classes) {
    ClassMoments m = class_moments(features, labels, num_classes);
    const double d = static_cast<double>(features.cols());
    std::map<std::uint32_t, RowVector> means;
    for (auto& [c, sum] : m.sums) {
        means.emplace(c, sum / static_cast<double>(m.counts[c]));
    }
    std::map<std::uint32_t, double> sq;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sq[labels[i]] += (features.row(static_cast<Eigen::Index>(i)) - means.at(labels[i])).squaredNorm();
    }

    VarianceStats st;
    st.num_classes = means.size();
    st.per_class_intra.assign(static_cast<std::size_t>(means.rbegin()->first) + 1, 0.0);
    for (const auto& [c, total] : sq) {
        const double v = total / static_cast<double>(m.counts[c]) / d;
        st.per_class_intra[c] = v;
        st.intra_class += v;
    }
    st.intra_class /= static_cast<double>(means.size());

    RowVector grand = RowVector::Zero(features.cols());
    for (const auto& [c, mu] : means) {
        grand += mu;
    }
    grand /= static_cast<double>(means.size());
    for (const auto& [c, mu] : means) {
        st.inter_class += (mu - grand).squaredNorm() / d;
    }
    st.inter_class /= static_cast<double>(means.size());
    return st;
}

double intra_class_variance(const Matrix& features, std::span<const std::uint32_t> labels,
                            std::size_t num_classes) {
    return variance_stats(features, labels, num_classes).intra_class;
}

double inter_class_variance(const Matrix& features, std::span<const std::uint32_t> labels,
                            std::size_t num_classes) {
    const VarianceStats st = variance_stats(features, labels, num_classes);
    if (st.num_classes < 2) {
        throw TooFewClasses("inter-class variance needs at least 2 classes");
    }
    return st.inter_class;
}

}  // namespace apt
