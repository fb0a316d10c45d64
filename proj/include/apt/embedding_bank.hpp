#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "apt/types.hpp"

namespace apt {

enum class SplitTag : std::uint8_t { TrainPool = 0, Val = 1, Test = 2 };

struct ImageRecord {
    /// One tokens_per_image x dim matrix per exported view. Row 0 of each
    /// view is the global image feature; remaining rows are patch tokens.
    std::vector<FloatMatrix> views;
    std::uint32_t label = 0;
    SplitTag split = SplitTag::TrainPool;

    const FloatMatrix& tokens() const { return views.front(); }

    bool operator==(const ImageRecord&) const = default;
};

/// Frozen-encoder outputs for one dataset.
struct EmbeddingBank {
    std::uint32_t dim = 0;
    std::uint32_t tokens_per_image = 1;
    std::vector<std::string> class_names;
    FloatMatrix text_embeddings;  // num_classes x dim
    std::vector<ImageRecord> images;
    std::map<std::string, std::string> metadata;

    std::size_t num_classes() const { return class_names.size(); }

    /// Throws InvariantViolation naming the first broken invariant.
    void validate() const;

    bool operator==(const EmbeddingBank&) const = default;
};

/// Reads an APTB file plus its optional `<path>.manifest.json` sidecar.
EmbeddingBank load_bank(const std::filesystem::path& path);

/// Writes an APTB file; the sidecar is written only when metadata is non-empty.
void save_bank(const EmbeddingBank& bank, const std::filesystem::path& path);

/// In-memory encoding used by save_bank (no sidecar).
std::vector<std::uint8_t> encode_bank(const EmbeddingBank& bank);
EmbeddingBank decode_bank(std::span<const std::uint8_t> bytes);

/// Size in bytes of the encoded bank file, computed in closed form.
std::uint64_t encoded_bank_size(const EmbeddingBank& bank);

struct SynthSpec {
    std::uint32_t num_classes = 4;
    std::uint32_t dim = 16;
    std::uint32_t tokens_per_image = 5;
    std::uint32_t samples_per_class = 32;
    double intra_class_sigma = 0.05;
    double inter_class_sigma = 1.0;
    /// Per-dimension noise between a class mean and its text row, as a
    /// multiple of inter_class_sigma.
    double text_noise = 1.0;
    /// Per-dimension scale of one offset shared by every text row (a
    /// modality gap between text and image features), in units of
    /// inter_class_sigma.
    double modality_gap = 0.0;
    /// Patch-token perturbation around row 0, as a multiple of intra_class_sigma.
    double patch_noise = 0.5;
    std::uint64_t seed = 0;
};

/// Deterministic Gaussian class-cluster bank with a 50/20/30 per-class split.
EmbeddingBank generate_synthetic_bank(const SynthSpec& spec);

struct OodSpec {
    std::uint32_t count = 64;
    /// Minimum distance from every class mean, in units of sigma * sqrt(dim).
    double min_distance_sigmas = 5.0;
    double sigma = 0.8;
    std::uint64_t seed = 0;
};

/// Images whose row-0 features sit in the orthogonal complement of the
/// reference bank's text rows, at least min_distance_sigmas away from every
/// class mean. Labels are 0 and every record is tagged Test.
EmbeddingBank generate_ood_bank(const EmbeddingBank& reference, const OodSpec& spec);

struct Episode {
    std::uint32_t shots = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> train_indices;  // class-major, ascending within class
    std::vector<std::size_t> val_indices;
    std::vector<std::size_t> test_indices;
    std::vector<std::uint32_t> class_subset;

    bool operator==(const Episode&) const = default;
};

/// Draws exactly `shots` train_pool records per class without replacement.
Episode sample_episode(const EmbeddingBank& bank, std::uint32_t shots, std::uint64_t seed);

/// Base classes are [0, ceil(k/2)); the rest become the new half.
std::pair<EmbeddingBank, EmbeddingBank> split_base_new(const EmbeddingBank& bank);

/// Row 0 of the first view of each image, as doubles.
Matrix global_features(const EmbeddingBank& bank, std::span<const std::size_t> indices);
std::vector<std::uint32_t> labels_of(const EmbeddingBank& bank, std::span<const std::size_t> indices);
std::vector<std::size_t> indices_with_split(const EmbeddingBank& bank, SplitTag tag);

}  // namespace apt
