#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "apt/classifier.hpp"
#include "apt/embedding_bank.hpp"
#include "apt/trainer.hpp"

namespace apt {

/// Monte-Carlo-Dropout result for one image.
struct PredictiveSummary {
    Vector mean_probs;
    std::uint32_t predicted = 0;
    double entropy = 0.0;
    double confidence = 0.0;  // set by normalize_confidence()
    std::uint32_t num_samples = 0;
    std::optional<bool> correct;
};

enum class MaxEntropyPolicy { Empirical, LnK };

MaxEntropyPolicy parse_max_entropy(std::string_view text);

using RecordRefs = std::vector<const ImageRecord*>;
RecordRefs records_at(const EmbeddingBank& bank, std::span<const std::size_t> indices);

/// M stochastic passes with per-sample seeds derive_seed(seed, m), averaged
/// in sample order so the result does not depend on `jobs`.
PredictiveSummary mc_predict(const TrainedModel& model, const ImageRecord& record, const Matrix& text,
                             std::uint32_t samples, std::uint64_t seed, unsigned jobs = 1);

/// mc_predict over a set; image i uses seed derive_seed(seed, i).
/// `correct` is filled only when `labels_known`.
std::vector<PredictiveSummary> mc_predict_set(const TrainedModel& model, const RecordRefs& records,
                                              const Matrix& text, std::uint32_t samples, std::uint64_t seed,
                                              bool labels_known, unsigned jobs = 1);

/// -sum p ln p with 0 ln 0 = 0.
double entropy(const Vector& probs);
double entropy(const ProbVector& p);

/// 1 - S / max_S. Throws DegenerateMax when max_S is not positive.
double confidence(double entropy_value, double max_entropy);

struct Normalization {
    double max_entropy = 0.0;
    bool degenerate = false;  // every prediction one-hot; all confidences set to 1
};

Normalization normalize_confidence(std::span<PredictiveSummary> summaries, MaxEntropyPolicy policy,
                                   std::size_t num_classes);

struct CalibrationRecord {
    double confidence = 0.0;
    bool correct = false;
};

struct CalibrationBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double confidence_sum = 0.0;
    double correct_sum = 0.0;

    double mean_confidence() const { return confidence_sum / static_cast<double>(count); }
    double mean_accuracy() const { return correct_sum / static_cast<double>(count); }
};

struct CalibrationReport {
    std::vector<CalibrationBin> bins;
    std::size_t total = 0;
    double ece = 0.0;
};

/// Bin of `confidence` among `num_bins` equal-width bins: [0, 1/P], then
/// right-closed (p/P, (p+1)/P].
std::size_t calibration_bin(double confidence, std::size_t num_bins);

/// ECE = sum_p (|B_p| / N) |acc(B_p) - conf(B_p)| over non-empty bins.
CalibrationReport ece(std::span<const CalibrationRecord> records, std::uint32_t num_bins);

struct ReliabilityRow {
    double bin_lo = 0.0;
    double bin_hi = 0.0;
    std::size_t count = 0;
    std::optional<double> mean_conf;
    std::optional<double> mean_acc;
};

std::vector<ReliabilityRow> reliability_data(const CalibrationReport& report);

struct SetStats {
    double mean_entropy = 0.0;
    double mean_confidence = 0.0;
};

struct OODReport {
    std::vector<PredictiveSummary> id;
    std::vector<PredictiveSummary> ood;
    Normalization id_norm;
    Normalization ood_norm;
    SetStats id_stats;
    SetStats ood_stats;
};

/// OOD records are scored with correct := false. Confidence is normalized
/// separately within each set.
OODReport ood_evaluate(const TrainedModel& model, const RecordRefs& id_records, const RecordRefs& ood_records,
                       const Matrix& text, std::uint32_t samples, std::uint64_t seed,
                       MaxEntropyPolicy policy = MaxEntropyPolicy::Empirical, unsigned jobs = 1);

SetStats set_stats(std::span<const PredictiveSummary> summaries);

}  // namespace apt
