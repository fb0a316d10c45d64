#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apt/apt_block.hpp"
#include "apt/embedding_bank.hpp"

namespace apt {

/// Which token rows feed the keys/values of the cross-attention.
enum class KvPolicy { All, PatchesOnly, ClsOnly };

KvPolicy parse_kv_policy(std::string_view text);
std::string_view to_string(KvPolicy policy);

/// Rows of `tokens` selected by the policy, as doubles.
Matrix select_kv(const FloatMatrix& tokens, KvPolicy policy);

struct TrainConfig {
    std::uint32_t shots = 16;
    double lr0 = 0.001;
    std::optional<std::uint32_t> epochs;  // default: epochs_for_shots(shots)
    std::uint32_t batch_size = 1;          // images per SGD step (gradient accumulation)
    double dropout_rate = 0.2;
    std::uint32_t heads = 8;
    std::optional<std::uint32_t> ff_dim;   // default 4 * dim
    double tau = 0.01;
    KvPolicy kv_policy = KvPolicy::All;
    std::uint64_t seed = 0;
    std::uint32_t eval_every = 1;

    std::uint32_t resolved_epochs() const;
};

struct HistoryEntry {
    std::uint32_t epoch = 0;
    double loss = 0.0;     // mean training loss over the epoch
    double val_acc = 0.0;  // validation accuracy entering the epoch; NaN when not evaluated

    bool operator==(const HistoryEntry& o) const;
};

struct TrainedModel {
    APTParams params;
    double tau = 0.01;
    KvPolicy kv_policy = KvPolicy::All;
    std::vector<std::string> class_names;  // empty when loaded from a checkpoint
    std::vector<HistoryEntry> history;
};

/// 1 -> 50, 2/4 -> 100, 8/16 -> 150.
std::uint32_t epochs_for_shots(std::uint32_t shots);

/// lr0 * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::uint32_t step, std::uint32_t total_steps, double lr0);

/// The untrained model train() starts from.
TrainedModel initial_model(const EmbeddingBank& bank, const TrainConfig& config);

TrainedModel train(const EmbeddingBank& bank, const Episode& episode, const TrainConfig& config);

/// Deterministic (dropout off) predictions of the adapted classifier.
std::vector<std::uint32_t> predict(const TrainedModel& model, const EmbeddingBank& bank,
                                   std::span<const std::size_t> indices, unsigned jobs = 1);
double evaluate_accuracy(const TrainedModel& model, const EmbeddingBank& bank,
                         std::span<const std::size_t> indices, unsigned jobs = 1);

/// Accuracy of the untuned text rows.
double zero_shot_accuracy(const EmbeddingBank& bank, std::span<const std::size_t> indices, double tau);

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const TrainedModel& model);
TrainedModel decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace apt
