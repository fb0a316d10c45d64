#include "apt/uq.hpp"

#include <cmath>

#include "apt/errors.hpp"
#include "apt/parallel.hpp"
#include "apt/random.hpp"

namespace apt {

MaxEntropyPolicy parse_max_entropy(std::string_view text) {
    if (text == "empirical") return MaxEntropyPolicy::Empirical;
    if (text == "ln_k") return MaxEntropyPolicy::LnK;
    throw UsageError("unknown max-entropy policy '" + std::string(text) + "' (expected empirical or ln_k)");
}

RecordRefs records_at(const EmbeddingBank& bank, std::span<const std::size_t> indices) {
    RecordRefs refs;
    refs.reserve(indices.size());
    for (std::size_t i : indices) {
        refs.push_back(&bank.images.at(i));
    }
    return refs;
}

PredictiveSummary mc_predict(const TrainedModel& model, const ImageRecord& record, const Matrix& text,
                             std::uint32_t samples, std::uint64_t seed, unsigned jobs) {
    if (samples < 1) {
        throw InvalidSampleCount("need at least one Monte-Carlo sample");
    }
    const FloatMatrix& tokens = record.tokens();
    const Matrix kv = select_kv(tokens, model.kv_policy);
    const RowVector z = tokens.row(0).cast<double>();
    std::vector<Vector> draws(samples);
    parallel_for(samples, jobs, [&](std::size_t m) {
        const Matrix refined = refine(model.params, text, kv, DropoutMode::monte_carlo(derive_seed(seed, m)));
        draws[m] = class_probabilities(refined, z, model.tau).probs;
    });

    PredictiveSummary s;
    s.num_samples = samples;
    s.mean_probs = Vector::Zero(text.rows());
    for (const Vector& p : draws) {
        s.mean_probs += p;
    }
    s.mean_probs /= static_cast<double>(samples);
    s.predicted = argmax(s.mean_probs);
    s.entropy = entropy(s.mean_probs);
    s.correct = s.predicted == record.label;
    return s;
}

std::vector<PredictiveSummary> mc_predict_set(const TrainedModel& model, const RecordRefs& records,
                                              const Matrix& text, std::uint32_t samples, std::uint64_t seed,
                                              bool labels_known, unsigned jobs) {
    if (samples < 1) {
        throw InvalidSampleCount("need at least one Monte-Carlo sample");
    }
    std::vector<PredictiveSummary> out(records.size());
    parallel_for(records.size(), jobs, [&](std::size_t i) {
        out[i] = mc_predict(model, *records[i], text, samples, derive_seed(seed, i));
        if (!labels_known) {
            out[i].correct = false;
        }
    });
    return out;
}

double entropy(const Vector& probs) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        const double p = probs(i);
        if (p > 0.0) {
            s -= p * std::log(p);
        }
    }
    return std::max(s, 0.0);
}

double entropy(const ProbVector& p) { return entropy(p.probs); }

double confidence(double entropy_value, double max_entropy) {
    if (!(max_entropy > 0.0)) {
        throw DegenerateMax("maximum entropy is zero; every prediction is one-hot");
    }
    return std::clamp(1.0 - entropy_value / max_entropy, 0.0, 1.0);
}

Normalization normalize_confidence(std::span<PredictiveSummary> summaries, MaxEntropyPolicy policy,
                                   std::size_t num_classes) {
    Normalization n;
    if (policy == MaxEntropyPolicy::LnK) {
        n.max_entropy = std::log(static_cast<double>(num_classes));
    } else {
        for (const PredictiveSummary& s : summaries) {
            n.max_entropy = std::max(n.max_entropy, s.entropy);
        }
    }
    n.degenerate = !(n.max_entropy > 0.0);
    for (PredictiveSummary& s : summaries) {
        s.confidence = n.degenerate ? 1.0 : confidence(s.entropy, n.max_entropy);
    }
    return n;
}

std::size_t calibration_bin(double confidence, std::size_t num_bins) {
    const double p = static_cast<double>(num_bins);
    auto edge = [&](std::size_t i) { return static_cast<double>(i) / p; };
    double guess = std::ceil(confidence * p) - 1.0;
    std::size_t i = guess <= 0.0 ? 0 : std::min(static_cast<std::size_t>(guess), num_bins - 1);
    while (i > 0 && confidence <= edge(i)) {
        --i;
    }
    while (i + 1 < num_bins && confidence > edge(i + 1)) {
        ++i;
    }
    return i;
}

CalibrationReport ece(std::span<const CalibrationRecord> records, std::uint32_t num_bins) {
    if (records.empty()) {
        throw EmptyInput("ECE needs at least one record");
    }
    if (num_bins < 1) {
        throw InvalidSpec("need at least one bin");
    }
    CalibrationReport report;
    report.total = records.size();
    report.bins.resize(num_bins);
    for (std::uint32_t p = 0; p < num_bins; ++p) {
        report.bins[p].lo = static_cast<double>(p) / num_bins;
        report.bins[p].hi = static_cast<double>(p + 1) / num_bins;
    }
    for (const CalibrationRecord& r : records) {
        if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
            throw InvalidSpec("confidence " + std::to_string(r.confidence) + " outside [0, 1]");
        }
        CalibrationBin& b = report.bins[calibration_bin(r.confidence, num_bins)];
        ++b.count;
        b.confidence_sum += r.confidence;
        b.correct_sum += r.correct ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(records.size());
    for (const CalibrationBin& b : report.bins) {
        if (b.count > 0) {
            report.ece += static_cast<double>(b.count) / n * std::abs(b.mean_accuracy() - b.mean_confidence());
        }
    }
    return report;
}

std::vector<ReliabilityRow> reliability_data(const CalibrationReport& report) {
    std::vector<ReliabilityRow> rows;
    rows.reserve(report.bins.size());
    for (const CalibrationBin& b : report.bins) {
        ReliabilityRow row{b.lo, b.hi, b.count, std::nullopt, std::nullopt};
        if (b.count > 0) {
            row.mean_conf = b.mean_confidence();
            row.mean_acc = b.mean_accuracy();
        }
        rows.push_back(row);
    }
    return rows;
}

SetStats set_stats(std::span<const PredictiveSummary> summaries) {
    SetStats st;
    if (summaries.empty()) {
        return st;
    }
    for (const PredictiveSummary& s : summaries) {
        st.mean_entropy += s.entropy;
        st.mean_confidence += s.confidence;
    }
    st.mean_entropy /= static_cast<double>(summaries.size());
    st.mean_confidence /= static_cast<double>(summaries.size());
    return st;
}

OODReport ood_evaluate(const TrainedModel& model, const RecordRefs& id_records, const RecordRefs& ood_records,
                       const Matrix& text, std::uint32_t samples, std::uint64_t seed, MaxEntropyPolicy policy,
                       unsigned jobs) {
    if (id_records.empty() || ood_records.empty()) {
        throw EmptySet("OOD evaluation needs non-empty ID and OOD sets");
    }
    OODReport r;
    const auto k = static_cast<std::size_t>(text.rows());
    r.id = mc_predict_set(model, id_records, text, samples, seed, true, jobs);
    r.ood = mc_predict_set(model, ood_records, text, samples, seed, false, jobs);
    r.id_norm = normalize_confidence(r.id, policy, k);
    r.ood_norm = normalize_confidence(r.ood, policy, k);
    r.id_stats = set_stats(r.id);
    r.ood_stats = set_stats(r.ood);
    return r;
}

}  // namespace apt
