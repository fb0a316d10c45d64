#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "apt/uq.hpp"

namespace apt {

/// Shortest round-trip decimal form of a double ("null" never produced).
std::string format_number(double v);

std::string reliability_csv(std::span<const ReliabilityRow> rows);

/// Rows of image_id,confidence,entropy,correct.
std::string conf_unc_csv(std::span<const std::size_t> image_ids, std::span<const PredictiveSummary> summaries);

/// Rows of set,image_id,confidence,entropy for both sets.
std::string ood_csv(std::span<const std::size_t> id_ids, std::span<const std::size_t> ood_ids,
                    const OODReport& report);

nlohmann::json to_json(std::span<const ReliabilityRow> rows);
nlohmann::json summaries_to_json(std::span<const std::size_t> image_ids,
                                 std::span<const PredictiveSummary> summaries);

/// Aggregates `<dir>/seed_*/metrics.json` into one summary with keys
/// accuracy_mean, accuracy_per_seed, ece, mean_entropy, config, ...
/// Throws MissingArtifacts when no per-seed metrics exist.
nlohmann::json run_report(const std::filesystem::path& output_dir);

}  // namespace apt
