#include "apt/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "apt/errors.hpp"

namespace apt {

std::string format_number(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

std::string reliability_csv(std::span<const ReliabilityRow> rows) {
    std::ostringstream os;
    os << "bin_lo,bin_hi,count,mean_conf,mean_acc\n";
    for (const ReliabilityRow& r : rows) {
        os << format_number(r.bin_lo) << ',' << format_number(r.bin_hi) << ',' << r.count << ','
           << (r.mean_conf ? format_number(*r.mean_conf) : "") << ','
           << (r.mean_acc ? format_number(*r.mean_acc) : "") << '\n';
    }
    return os.str();
}

std::string conf_unc_csv(std::span<const std::size_t> image_ids, std::span<const PredictiveSummary> summaries) {
    std::ostringstream os;
    os << "image_id,confidence,entropy,correct\n";
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        const PredictiveSummary& s = summaries[i];
        os << image_ids[i] << ',' << format_number(s.confidence) << ',' << format_number(s.entropy) << ','
           << (s.correct.value_or(false) ? 1 : 0) << '\n';
    }
    return os.str();
}

std::string ood_csv(std::span<const std::size_t> id_ids, std::span<const std::size_t> ood_ids,
                    const OODReport& report) {
    std::ostringstream os;
    os << "set,image_id,confidence,entropy\n";
    auto emit = [&](const char* set, std::span<const std::size_t> ids, const std::vector<PredictiveSummary>& s) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            os << set << ',' << ids[i] << ',' << format_number(s[i].confidence) << ','
               << format_number(s[i].entropy) << '\n';
        }
    };
    emit("id", id_ids, report.id);
    emit("ood", ood_ids, report.ood);
    return os.str();
}

nlohmann::json to_json(std::span<const ReliabilityRow> rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const ReliabilityRow& r : rows) {
        nlohmann::json row = {{"bin_lo", r.bin_lo}, {"bin_hi", r.bin_hi}, {"count", r.count}};
        row["mean_conf"] = r.mean_conf ? nlohmann::json(*r.mean_conf) : nlohmann::json(nullptr);
        row["mean_acc"] = r.mean_acc ? nlohmann::json(*r.mean_acc) : nlohmann::json(nullptr);
        out.push_back(std::move(row));
    }
    return out;
}

nlohmann::json summaries_to_json(std::span<const std::size_t> image_ids,
                                 std::span<const PredictiveSummary> summaries) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        const PredictiveSummary& s = summaries[i];
        nlohmann::json row = {{"image_id", image_ids[i]},
                              {"confidence", s.confidence},
                              {"entropy", s.entropy},
                              {"predicted", s.predicted}};
        row["correct"] = s.correct ? nlohmann::json(*s.correct) : nlohmann::json(nullptr);
        out.push_back(std::move(row));
    }
    return out;
}

namespace {

nlohmann::json mean_or_null(const std::vector<double>& v) {
    if (v.empty()) {
        return nullptr;
    }
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

}  // namespace

nlohmann::json run_report(const std::filesystem::path& output_dir) {
    std::map<std::uint64_t, nlohmann::json> per_seed;
    if (std::filesystem::is_directory(output_dir)) {
        for (const auto& entry : std::filesystem::directory_iterator(output_dir)) {
            const std::string name = entry.path().filename().string();
            const auto metrics = entry.path() / "metrics.json";
            if (!entry.is_directory() || !name.starts_with("seed_") || !std::filesystem::exists(metrics)) {
                continue;
            }
            std::ifstream in(metrics);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw MissingArtifacts(metrics.string() + " is not valid JSON: " + e.what());
            }
            if (!j.contains("seed") || !j.contains("test_accuracy")) {
                throw MissingArtifacts(metrics.string() + " lacks seed/test_accuracy");
            }
            const auto seed = j["seed"].get<std::uint64_t>();
            per_seed[seed] = std::move(j);
        }
    }
    if (per_seed.empty()) {
        throw MissingArtifacts("no seed_*/metrics.json under " + output_dir.string());
    }

    std::vector<double> acc, zs, ece, ent, conf;
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& [seed, j] : per_seed) {
        seeds.push_back(seed);
        acc.push_back(j["test_accuracy"].get<double>());
        if (j.contains("zero_shot_test_accuracy")) zs.push_back(j["zero_shot_test_accuracy"].get<double>());
        if (j.contains("ece")) ece.push_back(j["ece"].get<double>());
        if (j.contains("mean_entropy")) ent.push_back(j["mean_entropy"].get<double>());
        if (j.contains("mean_confidence")) conf.push_back(j["mean_confidence"].get<double>());
    }

    nlohmann::json report;
    report["seeds"] = seeds;
    report["accuracy_per_seed"] = acc;
    report["accuracy_mean"] = mean_or_null(acc);
    report["accuracy_min"] = *std::min_element(acc.begin(), acc.end());
    report["accuracy_max"] = *std::max_element(acc.begin(), acc.end());
    report["zero_shot_accuracy_mean"] = mean_or_null(zs);
    report["ece"] = mean_or_null(ece);
    report["ece_per_seed"] = ece;
    report["mean_entropy"] = mean_or_null(ent);
    report["mean_confidence"] = mean_or_null(conf);
    report["config"] = per_seed.begin()->second.value("config", nlohmann::json::object());
    return report;
}

}  // namespace apt
