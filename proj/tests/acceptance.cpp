// Acceptance checks. With no arguments every criterion runs; otherwise only
// the named ones. One PASS/FAIL line per criterion; exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "apt/analysis.hpp"
#include "apt/cli.hpp"
#include "apt/classifier.hpp"
#include "apt/trainer.hpp"
#include "apt/uq.hpp"
#include "oracles/brute_force_ece.hpp"
#include "oracles/scalar_softmax.hpp"
#include "support.hpp"

using namespace apt;

namespace {

constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientEpsilon = 1e-4;
constexpr double kGradientBudgetSeconds = 60.0;
constexpr double kSoftmaxTolerance = 1e-9;
constexpr double kEceExampleTolerance = 1e-15;  // 0.30 is not a binary fraction
constexpr double kEceOracleTolerance = 1e-12;
constexpr double kMeanTolerance = 1e-12;  // average of M equal doubles
constexpr int kLearningGainPoints = 5;
constexpr double kLearningBudgetSeconds = 120.0;
constexpr double kTableTolerance = 0.01;

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const EmbeddingBank& acceptance_bank() {
    static const EmbeddingBank bank = [] {
        SynthSpec spec;
        spec.num_classes = 4;
        spec.dim = 16;
        spec.intra_class_sigma = 0.8;
        spec.inter_class_sigma = 1.0;
        spec.samples_per_class = 32;
        spec.seed = 1;
        return generate_synthetic_bank(spec);
    }();
    return bank;
}

TrainConfig acceptance_config() {
    TrainConfig c;
    c.shots = 16;
    c.seed = 1;
    return c;
}

struct Trained {
    Episode episode;
    TrainedModel model;
    double seconds = 0.0;
};

const Trained& acceptance_model() {
    static const Trained t = [] {
        Timer timer;
        Trained r;
        r.episode = sample_episode(acceptance_bank(), acceptance_config().shots, acceptance_config().seed);
        r.model = train(acceptance_bank(), r.episode, acceptance_config());
        r.seconds = timer.seconds();
        return r;
    }();
    return t;
}

Outcome gradient() {
    Timer timer;
    Rng rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::uint32_t heads = std::vector<std::uint32_t>{1, 2, 4}[rng.below(3)];
        const std::uint32_t dim = heads * static_cast<std::uint32_t>(1 + rng.below(16 / heads));
        const auto k = static_cast<Eigen::Index>(1 + rng.below(4));
        const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
        const APTParams p = test::random_params(dim, heads, 4 * dim, 1000 + i);
        const Matrix w = test::random_matrix(k, dim, rng);
        const Matrix t = test::random_matrix(n, dim, rng);
        worst = std::max(worst, finite_diff_check(p, w, t, kGradientEpsilon));
    }
    const double secs = timer.seconds();
    return {worst < kGradientTolerance && secs < kGradientBudgetSeconds,
            fmt("max relative error %.3g over 100 instances (< %g), %.1f s (< %g s)", worst, kGradientTolerance, secs,
                kGradientBudgetSeconds)};
}

Outcome zero_init() {
    Rng rng(7);
    int identical = 0;
    for (int i = 0; i < 20; ++i) {
        const std::uint32_t heads = std::vector<std::uint32_t>{1, 2, 4, 8}[rng.below(4)];
        const std::uint32_t dim = heads * static_cast<std::uint32_t>(1 + rng.below(8));
        const APTParams p = init_params(dim, heads, 4 * dim, 500 + i);
        const Matrix w = test::random_matrix(1 + rng.below(6), dim, rng, 3.0);
        const Matrix t = test::random_matrix(1 + rng.below(10), dim, rng, 3.0);
        identical += refine(p, w, t, DropoutMode::off()) == w;
    }
    const Trained& m = acceptance_model();
    const double epoch0 = m.model.history.at(0).val_acc;
    const double zs = zero_shot_accuracy(acceptance_bank(), m.episode.val_indices, m.model.tau);
    return {identical == 20 && epoch0 == zs,
            fmt("%d/20 pairs return W exactly; epoch-0 val %.6f vs zero-shot %.6f", identical, epoch0, zs)};
}

Outcome softmax_oracle() {
    Rng rng(99);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const auto k = static_cast<Eigen::Index>(2 + rng.below(15));
        const auto d = static_cast<Eigen::Index>(2 + rng.below(63));
        const Matrix w = test::random_matrix(k, d, rng);
        const RowVector z = test::random_matrix(1, d, rng);
        const double tau = std::vector<double>{0.01, 0.02, 0.1, 1.0}[rng.below(4)];
        const ProbVector p = class_probabilities(w, z, tau);
        std::vector<std::vector<double>> rows(k, std::vector<double>(d));
        for (Eigen::Index r = 0; r < k; ++r)
            for (Eigen::Index c = 0; c < d; ++c) rows[r][c] = w(r, c);
        const auto want = oracle::class_probabilities(rows, std::vector<double>(z.data(), z.data() + d), tau);
        for (Eigen::Index r = 0; r < k; ++r) worst = std::max(worst, std::abs(p[r] - want[r]));
    }

    // cosines on a 2^-20 grid and integer shifts keep c + s exact
    int exact = 0;
    for (int i = 0; i < 50; ++i) {
        Vector c(6);
        for (Eigen::Index j = 0; j < 6; ++j) c(j) = (double(rng.below(1 << 21)) - double(1 << 20)) / double(1 << 20);
        const double s = double(rng.below(64)) - 32.0;
        exact += softmax_with_temperature(c, 0.01).probs == softmax_with_temperature(c.array() + s, 0.01).probs;
    }
    return {worst < kSoftmaxTolerance && exact == 50,
            fmt("max |p - oracle| %.3g over 50 instances (< %g); shift invariance exact on %d/50", worst,
                kSoftmaxTolerance, exact)};
}

Outcome learning() {
    const Trained& m = acceptance_model();
    const auto& test_ids = m.episode.test_indices;
    const auto labels = labels_of(acceptance_bank(), test_ids);
    const auto tuned = predict(m.model, acceptance_bank(), test_ids);
    const Matrix text = acceptance_bank().text_embeddings.cast<double>();
    const Matrix z = global_features(acceptance_bank(), test_ids);
    long tuned_hits = 0, zs_hits = 0;
    for (std::size_t i = 0; i < test_ids.size(); ++i) {
        tuned_hits += tuned[i] == labels[i];
        zs_hits += zero_shot_predict(text, z.row(static_cast<Eigen::Index>(i)), m.model.tau).first == labels[i];
    }
    const long n = static_cast<long>(test_ids.size());
    const bool gain = 100 * (tuned_hits - zs_hits) >= kLearningGainPoints * n;
    return {gain && m.seconds < kLearningBudgetSeconds,
            fmt("trained %ld/%ld vs zero-shot %ld/%ld (gain %.2f pp, need >= %d); training %.1f s (< %g s)",
                tuned_hits, n, zs_hits, n, 100.0 * double(tuned_hits - zs_hits) / double(n), kLearningGainPoints,
                m.seconds, kLearningBudgetSeconds)};
}

Outcome ece_oracle() {
    const std::vector<CalibrationRecord> four{{0.9, true}, {0.8, false}, {0.3, true}, {0.2, false}};
    const double example = ece(four, 2).ece;

    // confidence j/16 on 16 records of which j are correct
    std::vector<CalibrationRecord> perfect;
    Rng rng(3);
    for (int j = 0; j <= 16; ++j)
        for (int i = 0; i < 16; ++i) perfect.push_back({j / 16.0, i < j});
    rng.shuffle(std::span<CalibrationRecord>(perfect));
    const double calibrated = ece(perfect, 10).ece;

    double worst = 0.0;
    for (unsigned P : {5u, 10u, 15u}) {
        std::vector<CalibrationRecord> recs(1000);
        for (auto& r : recs) {
            r.confidence = rng.below(8) == 0 ? double(rng.below(P + 1)) / P : rng.uniform();
            r.correct = rng.uniform() < r.confidence * r.confidence;
        }
        worst = std::max(worst, std::abs(ece(recs, P).ece - oracle::brute_force_ece(recs, P)));
    }
    return {std::abs(example - 0.30) <= kEceExampleTolerance && calibrated == 0.0 && worst < kEceOracleTolerance,
            fmt("4-record example %.17g (0.30); perfectly calibrated %.3g; brute-force gap %.3g (< %g)", example,
                calibrated, worst, kEceOracleTolerance)};
}

Outcome mcd_sanity() {
    const Trained& m = acceptance_model();
    const EmbeddingBank& bank = acceptance_bank();
    const Matrix text = bank.text_embeddings.cast<double>();
    const RecordRefs refs = records_at(bank, m.episode.test_indices);

    TrainedModel still = m.model;
    still.params.dropout_rate = 0.0;
    bool identical = true;
    double mean_gap = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        const Matrix kv = select_kv(refs[i]->tokens(), still.kv_policy);
        const Matrix det = refine(still.params, text, kv, DropoutMode::off());
        for (std::uint64_t s = 0; s < 100; ++s)
            identical = identical && refine(still.params, text, kv, DropoutMode::monte_carlo(derive_seed(i, s))) == det;
        const Vector p = class_probabilities(det, refs[i]->tokens().row(0).cast<double>(), still.tau).probs;
        mean_gap = std::max(mean_gap, (mc_predict(still, *refs[i], text, 100, i).mean_probs - p).cwiseAbs().maxCoeff());
    }

    const auto one = mc_predict_set(m.model, refs, text, 100, 1, true, 1);
    bool bounded = true, same = true;
    const double ln_k = std::log(double(bank.num_classes()));
    for (unsigned jobs : {2u, 4u}) {
        const auto other = mc_predict_set(m.model, refs, text, 100, 1, true, jobs);
        for (std::size_t i = 0; i < one.size(); ++i) same = same && other[i].mean_probs == one[i].mean_probs;
    }
    double lo = 1e9, hi = -1e9;
    for (const auto& s : one) {
        bounded = bounded && s.entropy >= 0.0 && s.entropy <= ln_k;
        lo = std::min(lo, s.entropy);
        hi = std::max(hi, s.entropy);
    }
    return {identical && mean_gap < kMeanTolerance && bounded && same,
            fmt("dropout-0 samples identical: %s, mean vs deterministic pass %.3g; entropy range [%.4g, %.4g] within [0, %.5f]: %s; jobs 1/2/4 "
                "identical: %s",
                identical ? "yes" : "no", mean_gap, lo, hi, ln_k, bounded ? "yes" : "no", same ? "yes" : "no")};
}

Outcome ood_direction() {
    const Trained& m = acceptance_model();
    const EmbeddingBank& bank = acceptance_bank();
    OodSpec spec;
    spec.min_distance_sigmas = 5.0;
    spec.sigma = 0.8;
    spec.seed = 1;
    const EmbeddingBank far = generate_ood_bank(bank, spec);
    std::vector<std::size_t> all(far.images.size());
    std::iota(all.begin(), all.end(), 0);
    const OODReport r = ood_evaluate(m.model, records_at(bank, m.episode.test_indices), records_at(far, all),
                                     bank.text_embeddings.cast<double>(), 100, 1);
    const bool ok = r.ood_stats.mean_entropy > r.id_stats.mean_entropy &&
                    r.ood_stats.mean_confidence < r.id_stats.mean_confidence;
    return {ok, fmt("entropy ID %.4g vs OOD %.4g; confidence ID %.4g vs OOD %.4g", r.id_stats.mean_entropy,
                    r.ood_stats.mean_entropy, r.id_stats.mean_confidence, r.ood_stats.mean_confidence)};
}

Outcome table_f1_arithmetic() {
    struct Cell {
        const char* model;
        const char* dataset;
        double base, fresh, f1;
    };
    const std::vector<Cell> table{
        {"CLIP", "FGVC Aircraft", 27.19, 36.29, 31.09},   {"CLIP", "Oxford Flowers", 72.08, 77.80, 74.83},
        {"CLIP", "CUBirds", 65.18, 52.34, 58.06},         {"CoOp", "FGVC Aircraft", 40.44, 22.30, 28.75},
        {"CoOp", "Oxford Flowers", 97.60, 59.67, 74.06},  {"CoOp", "CUBirds", 81.51, 34.63, 48.60},
        {"CoCoOp", "FGVC Aircraft", 33.41, 23.71, 27.74}, {"CoCoOp", "Oxford Flowers", 94.87, 71.75, 81.71},
        {"CoCoOp", "CUBirds", 71.97, 8.04, 14.40},        {"APT", "FGVC Aircraft", 43.74, 31.26, 36.46},
        {"APT", "Oxford Flowers", 98.64, 71.98, 83.23},   {"APT", "CUBirds", 83.02, 43.42, 57.02},
    };
    int matched = 0;
    std::string misses;
    for (const Cell& c : table) {
        const double f1 = harmonic_mean(c.base, c.fresh);
        if (std::abs(f1 - c.f1) <= kTableTolerance + 1e-9) {
            ++matched;
        } else {
            misses += fmt("; %s/%s: computed %.4f vs table %.2f", c.model, c.dataset, f1, c.f1);
        }
    }
    return {matched == 12, fmt("%d/12 F1 cells within +/-%g", matched, kTableTolerance) + misses};
}

Outcome recipe_constants() {
    const std::map<std::uint32_t, std::uint32_t> want{{1, 50}, {2, 100}, {4, 100}, {8, 150}, {16, 150}};
    bool epochs_ok = true;
    for (const auto& [shots, epochs] : want) epochs_ok = epochs_ok && epochs_for_shots(shots) == epochs;

    test::TempDir dir("acceptance_recipe");
    SynthSpec spec;
    spec.samples_per_class = 8;
    spec.seed = 5;
    save_bank(generate_synthetic_bank(spec), dir / "bank.aptb");
    std::ostringstream out, err;
    const int code = cli::dispatch({"apt", "uq", "--bank", (dir / "bank.aptb").string(), "--shots", "1", "--out",
                                    (dir / "run").string()},
                                   out, err);
    bool defaults_ok = false;
    std::string seen = "uq exited " + std::to_string(code) + " " + err.str();
    if (code == 0) {
        std::ifstream in(dir / "run" / "report.json");
        const nlohmann::json cfg = nlohmann::json::parse(in)["config"];
        defaults_ok = cfg.at("lr") == 0.001 && cfg.at("dropout") == 0.2 && cfg.at("heads") == 8 &&
                      cfg.at("mc_samples") == 100;
        seen = "report.json config lr=" + cfg.at("lr").dump() + " dropout=" + cfg.at("dropout").dump() +
               " heads=" + cfg.at("heads").dump() + " mc_samples=" + cfg.at("mc_samples").dump();
    }
    return {epochs_ok && defaults_ok,
            std::string("epochs_for_shots 1/2/4/8/16 -> 50/100/100/150/150: ") + (epochs_ok ? "yes" : "no") + "; " +
                seen};
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome format_roundtrip() {
    test::TempDir dir("acceptance_format");
    Rng rng(11);
    int banks = 0, checkpoints = 0;
    for (int i = 0; i < 25; ++i) {
        SynthSpec spec;
        spec.num_classes = 1 + static_cast<std::uint32_t>(rng.below(6));
        spec.dim = 1 + static_cast<std::uint32_t>(rng.below(24));
        spec.tokens_per_image = 1 + static_cast<std::uint32_t>(rng.below(6));
        spec.samples_per_class = 1 + static_cast<std::uint32_t>(rng.below(5));
        spec.intra_class_sigma = rng.uniform();
        spec.seed = 100 + i;
        EmbeddingBank b = generate_synthetic_bank(spec);
        if (i % 5 == 0) b.images.clear();
        if (i % 3 == 0) {
            for (auto& r : b.images) r.views.push_back(r.views.front() * 0.5f);
        }
        save_bank(b, dir / "a.aptb");
        const EmbeddingBank back = load_bank(dir / "a.aptb");
        save_bank(back, dir / "b.aptb");
        banks += back == b && read_bytes(dir / "a.aptb") == read_bytes(dir / "b.aptb") &&
                 encode_bank(decode_bank(encode_bank(b))) == encode_bank(b);

        const std::uint32_t heads = std::vector<std::uint32_t>{1, 2, 4}[rng.below(3)];
        const std::uint32_t dim = heads * static_cast<std::uint32_t>(1 + rng.below(8));
        TrainedModel m;
        m.params = test::random_params(dim, heads, 1 + static_cast<std::uint32_t>(rng.below(40)), 300 + i);
        m.params.dropout_rate = static_cast<float>(rng.uniform() * 0.9);
        for (std::uint32_t e = 0, n = static_cast<std::uint32_t>(rng.below(6)); e < n; ++e)
            m.history.push_back({e, rng.normal(), e % 2 ? std::nan("") : rng.uniform()});
        save_checkpoint(m, dir / "a.aptc");
        const TrainedModel loaded = load_checkpoint(dir / "a.aptc");
        save_checkpoint(loaded, dir / "b.aptc");
        checkpoints += loaded.params == m.params && loaded.history == m.history &&
                       read_bytes(dir / "a.aptc") == read_bytes(dir / "b.aptc");
    }
    return {banks == 25 && checkpoints == 25,
            fmt("bank round trips %d/25, checkpoint round trips %d/25 byte-identical", banks, checkpoints)};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>> kCriteria{
    {"gradient_correctness", gradient},
    {"zero_init_identity", zero_init},
    {"softmax_oracle", softmax_oracle},
    {"learning_desk_scale", learning},
    {"ece_oracle", ece_oracle},
    {"mcd_sanity", mcd_sanity},
    {"ood_direction", ood_direction},
    {"table_f1_arithmetic", table_f1_arithmetic},
    {"recipe_constants", recipe_constants},
    {"format_roundtrips", format_roundtrip},
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> wanted(argv + 1, argv + argc);
    if (!wanted.empty() && wanted.front() == "--list") {
        for (const auto& [name, fn] : kCriteria) std::cout << name << "\n";
        return 0;
    }
    int failures = 0, ran = 0;
    for (const auto& [name, fn] : kCriteria) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
        ++ran;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    if (ran == 0) {
        std::cerr << "no such criterion\n";
        return 2;
    }
    return failures == 0 ? 0 : 1;
}
