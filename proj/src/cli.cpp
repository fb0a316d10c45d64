#include "apt/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <optional>

#include "apt/analysis.hpp"
#include "apt/embedding_bank.hpp"
#include "apt/errors.hpp"
#include "apt/report.hpp"
#include "apt/trainer.hpp"
#include "apt/uq.hpp"
#include "binary_io.hpp"

namespace apt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    // synth
    SynthSpec synth;
    OodSpec ood;
    std::optional<double> ood_sigma;
    std::string output;
    std::string ood_output;

    // shared
    std::string bank;
    std::string ood_bank;
    std::string checkpoint;
    std::string out_dir = ".";
    std::vector<std::uint64_t> seeds{1};
    std::uint32_t shots = 16;
    double lr = 0.001;
    std::optional<std::uint32_t> epochs;
    std::uint32_t batch_size = 1;
    double dropout = 0.2;
    std::uint32_t heads = 8;
    double tau = 0.01;
    std::uint32_t mc_samples = 100;
    std::uint32_t bins = 10;
    std::string max_entropy = "empirical";
    std::string kv_policy = "all";
    std::string split = "test";
    unsigned jobs = 1;

    // extract-manifest
    std::optional<std::uint32_t> expect_dim;
    std::optional<std::uint32_t> expect_tokens;
};

void add_bank(CLI::App* sub, Options& o) { sub->add_option("--bank", o.bank, "Embedding bank (APTB)"); }

void add_seeds(CLI::App* sub, Options& o) {
    sub->add_option("--seed", o.seeds, "Seed or comma-separated seed list")->delimiter(',')->capture_default_str();
}

void add_out(CLI::App* sub, Options& o) {
    sub->add_option("--out", o.out_dir, "Output directory")->capture_default_str();
}

void add_shots(CLI::App* sub, Options& o) {
    sub->add_option("--shots", o.shots, "Shots per class")
        ->check(CLI::IsMember({1u, 2u, 4u, 8u, 16u}))
        ->capture_default_str();
}

void add_training(CLI::App* sub, Options& o) {
    add_shots(sub, o);
    sub->add_option("--lr", o.lr, "Initial SGD learning rate")->capture_default_str();
    sub->add_option("--epochs", o.epochs, "Epochs (default: 50/100/150 by shot count)");
    sub->add_option("--batch-size", o.batch_size, "Images per SGD step")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--dropout", o.dropout, "Dropout rate")->capture_default_str()->check(CLI::Range(0.0, 0.999999));
    sub->add_option("--heads", o.heads, "Attention heads")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--kv-policy", o.kv_policy, "Key/value tokens")
        ->check(CLI::IsMember({"all", "patches-only", "cls-only"}))
        ->capture_default_str();
}

void add_tau(CLI::App* sub, Options& o) {
    sub->add_option("--tau", o.tau, "Softmax temperature")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_jobs(CLI::App* sub, Options& o) {
    sub->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_uq(CLI::App* sub, Options& o) {
    sub->add_option("--mc-samples", o.mc_samples, "Monte-Carlo dropout samples")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--bins", o.bins, "Calibration bins")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--max-entropy", o.max_entropy, "Entropy normaliser")
        ->check(CLI::IsMember({"empirical", "ln_k"}))
        ->capture_default_str();
}

void add_checkpoint(CLI::App* sub, Options& o) {
    sub->add_option("--checkpoint", o.checkpoint, "Use this checkpoint instead of training");
}

void write_json(const fs::path& path, const json& j) { detail::write_file_atomic(path, j.dump(2) + "\n"); }

void write_text(const fs::path& path, const std::string& text) { detail::write_file_atomic(path, text); }

EmbeddingBank require_bank(const std::string& path, const char* flag = "--bank") {
    if (path.empty()) {
        throw UsageError(std::string(flag) + " is required");
    }
    if (!fs::exists(path)) {
        throw UsageError(std::string(flag) + " " + path + " does not exist");
    }
    return load_bank(path);
}

TrainConfig train_config(const Options& o, std::uint64_t seed) {
    TrainConfig c;
    c.shots = o.shots;
    c.lr0 = o.lr;
    c.epochs = o.epochs;
    c.batch_size = o.batch_size;
    c.dropout_rate = o.dropout;
    c.heads = o.heads;
    c.tau = o.tau;
    c.kv_policy = parse_kv_policy(o.kv_policy);
    c.seed = seed;
    return c;
}

json config_json(const Options& o) {
    TrainConfig c = train_config(o, 0);
    return {{"shots", o.shots},
            {"lr", o.lr},
            {"epochs", c.resolved_epochs()},
            {"batch_size", o.batch_size},
            {"dropout", o.dropout},
            {"heads", o.heads},
            {"tau", o.tau},
            {"mc_samples", o.mc_samples},
            {"bins", o.bins},
            {"max_entropy", o.max_entropy},
            {"kv_policy", o.kv_policy}};
}

fs::path seed_dir(const Options& o, std::uint64_t seed) {
    fs::path dir = fs::path(o.out_dir) / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    return dir;
}

struct SeedRun {
    Episode episode;
    TrainedModel model;
};

// Trains (and checkpoints) for this seed, or loads --checkpoint.
SeedRun obtain_model(const EmbeddingBank& bank, const Options& o, std::uint64_t seed, const fs::path& dir) {
    SeedRun run;
    if (!o.checkpoint.empty()) {
        if (!fs::exists(o.checkpoint)) {
            throw UsageError("--checkpoint " + o.checkpoint + " does not exist");
        }
        run.model = load_checkpoint(o.checkpoint);
        run.model.tau = o.tau;
        run.model.kv_policy = parse_kv_policy(o.kv_policy);
        run.model.class_names = bank.class_names;
        if (run.model.params.dim != bank.dim) {
            throw ShapeMismatch("checkpoint dim " + std::to_string(run.model.params.dim) + " vs bank dim " +
                                std::to_string(bank.dim));
        }
        run.episode.seed = seed;
        run.episode.test_indices = indices_with_split(bank, SplitTag::Test);
        run.episode.val_indices = indices_with_split(bank, SplitTag::Val);
        return run;
    }
    run.episode = sample_episode(bank, o.shots, seed);
    run.model = train(bank, run.episode, train_config(o, seed));
    save_checkpoint(run.model, dir / "checkpoint.aptc");
    return run;
}

std::vector<std::size_t> split_indices(const EmbeddingBank& bank, const std::string& split) {
    if (split == "all") {
        std::vector<std::size_t> all(bank.images.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    if (split == "train") return indices_with_split(bank, SplitTag::TrainPool);
    if (split == "val") return indices_with_split(bank, SplitTag::Val);
    return indices_with_split(bank, SplitTag::Test);
}

json base_metrics(const EmbeddingBank& bank, const Options& o, const SeedRun& run) {
    json m;
    m["seed"] = run.episode.seed;
    m["config"] = config_json(o);
    m["test_accuracy"] = evaluate_accuracy(run.model, bank, run.episode.test_indices, o.jobs);
    m["zero_shot_test_accuracy"] = zero_shot_accuracy(bank, run.episode.test_indices, o.tau);
    m["num_test"] = run.episode.test_indices.size();
    if (!run.model.history.empty()) {
        m["final_train_loss"] = run.model.history.back().loss;
        m["epochs_run"] = run.model.history.size();
    }
    return m;
}

void finish_report(const Options& o, std::ostream& out) {
    const json report = run_report(o.out_dir);
    write_json(fs::path(o.out_dir) / "report.json", report);
    out << report.dump(2) << "\n";
}

// ---- subcommands ---------------------------------------------------------

int cmd_synth(Options& o, std::ostream& out) {
    if (o.output.empty()) {
        throw UsageError("-o/--output is required");
    }
    o.synth.seed = o.seeds.front();
    const EmbeddingBank bank = generate_synthetic_bank(o.synth);
    save_bank(bank, o.output);
    json summary = {{"path", o.output},
                    {"num_classes", bank.num_classes()},
                    {"dim", bank.dim},
                    {"tokens_per_image", bank.tokens_per_image},
                    {"num_images", bank.images.size()}};
    if (!o.ood_output.empty()) {
        o.ood.seed = o.synth.seed;
        o.ood.sigma = o.ood_sigma.value_or(o.synth.intra_class_sigma);
        const EmbeddingBank ood = generate_ood_bank(bank, o.ood);
        save_bank(ood, o.ood_output);
        summary["ood_path"] = o.ood_output;
        summary["ood_images"] = ood.images.size();
    }
    out << summary.dump(2) << "\n";
    return kExitOk;
}

int cmd_extract_manifest(Options& o, std::ostream& out) {
    const EmbeddingBank bank = require_bank(o.bank);
    std::vector<std::string> problems;
    for (const char* key : {"template", "model", "split_ratios", "split_seed"}) {
        if (!bank.metadata.contains(key)) {
            problems.push_back(std::string("manifest lacks key '") + key + "'");
        }
    }
    if (o.expect_dim && bank.dim != *o.expect_dim) {
        problems.push_back("dim " + std::to_string(bank.dim) + " != expected " + std::to_string(*o.expect_dim));
    }
    if (o.expect_tokens && bank.tokens_per_image != *o.expect_tokens) {
        problems.push_back("tokens_per_image " + std::to_string(bank.tokens_per_image) + " != expected " +
                           std::to_string(*o.expect_tokens));
    }
    json summary = {{"dim", bank.dim},
                    {"num_classes", bank.num_classes()},
                    {"tokens_per_image", bank.tokens_per_image},
                    {"num_images", bank.images.size()},
                    {"train_pool", indices_with_split(bank, SplitTag::TrainPool).size()},
                    {"val", indices_with_split(bank, SplitTag::Val).size()},
                    {"test", indices_with_split(bank, SplitTag::Test).size()},
                    {"metadata", bank.metadata},
                    {"valid", problems.empty()},
                    {"problems", problems}};
    out << summary.dump(2) << "\n";
    if (!problems.empty()) {
        throw InvariantViolation(problems.front());
    }
    return kExitOk;
}

int cmd_zeroshot(Options& o, std::ostream& out) {
    const EmbeddingBank bank = require_bank(o.bank);
    const std::vector<std::size_t> ids = split_indices(bank, o.split);
    const double acc = zero_shot_accuracy(bank, ids, o.tau);
    out << "accuracy: " << format_number(acc) << "\n";
    if (o.out_dir != ".") {
        fs::create_directories(o.out_dir);
        write_json(fs::path(o.out_dir) / "zeroshot.json",
                   {{"accuracy", acc}, {"split", o.split}, {"num_images", ids.size()}, {"tau", o.tau}});
    }
    return kExitOk;
}

int cmd_train(Options& o, std::ostream& out) {
    const EmbeddingBank bank = require_bank(o.bank);
    for (std::uint64_t seed : o.seeds) {
        const fs::path dir = seed_dir(o, seed);
        const SeedRun run = obtain_model(bank, o, seed, dir);
        json m = base_metrics(bank, o, run);
        json history = json::array();
        for (const HistoryEntry& h : run.model.history) {
            history.push_back({h.epoch, h.loss, std::isnan(h.val_acc) ? json(nullptr) : json(h.val_acc)});
        }
        m["history"] = history;
        write_json(dir / "metrics.json", m);
    }
    finish_report(o, out);
    return kExitOk;
}

int cmd_eval(Options& o, std::ostream& out) {
    const EmbeddingBank bank = require_bank(o.bank);
    if (o.checkpoint.empty()) {
        throw UsageError("--checkpoint is required");
    }
    Options local = o;
    const SeedRun run = obtain_model(bank, local, o.seeds.front(), fs::path(o.out_dir));
    const std::vector<std::size_t> ids = split_indices(bank, o.split);
    json result = {{"split", o.split},
                   {"num_images", ids.size()},
                   {"accuracy", evaluate_accuracy(run.model, bank, ids, o.jobs)},
                   {"zero_shot_accuracy", zero_shot_accuracy(bank, ids, o.tau)}};
    out << result.dump(2) << "\n";
    if (o.out_dir != ".") {
        fs::create_directories(o.out_dir);
        write_json(fs::path(o.out_dir) / "eval.json", result);
    }
    return kExitOk;
}

int cmd_uq(Options& o, std::ostream& out) {
    const EmbeddingBank bank = require_bank(o.bank);
    const MaxEntropyPolicy policy = parse_max_entropy(o.max_entropy);
    const Matrix text = bank.text_embeddings.cast<double>();
    bool first = true;
    for (std::uint64_t seed : o.seeds) {
        const fs::path dir = seed_dir(o, seed);
        const SeedRun run = obtain_model(bank, o, seed, dir);
        const std::vector<std::size_t>& ids = run.episode.test_indices;
        if (ids.empty()) {
            throw EmptySet("bank has no test records");
        }
        std::vector<PredictiveSummary> summaries =
            mc_predict_set(run.model, records_at(bank, ids), text, o.mc_samples, seed, true, o.jobs);
        const Normalization norm = normalize_confidence(summaries, policy, bank.num_classes());
        std::vector<CalibrationRecord> records;
        std::size_t mc_correct = 0;
        for (const PredictiveSummary& s : summaries) {
            records.push_back({s.confidence, s.correct.value_or(false)});
            mc_correct += s.correct.value_or(false) ? 1 : 0;
        }
        const CalibrationReport cal = ece(records, o.bins);
        const std::vector<ReliabilityRow> rows = reliability_data(cal);
        const SetStats stats = set_stats(summaries);

        const std::string rel = reliability_csv(rows);
        const std::string cu = conf_unc_csv(ids, summaries);
        write_text(dir / "reliability.csv", rel);
        write_text(dir / "conf_unc.csv", cu);
        json m = base_metrics(bank, o, run);
        m["ece"] = cal.ece;
        m["mc_accuracy"] = static_cast<double>(mc_correct) / static_cast<double>(summaries.size());
        m["mean_entropy"] = stats.mean_entropy;
        m["mean_confidence"] = stats.mean_confidence;
        m["max_entropy"] = norm.max_entropy;
        m["max_entropy_degenerate"] = norm.degenerate;
        m["reliability"] = to_json(rows);
        m["conf_unc"] = summaries_to_json(ids, summaries);
        write_json(dir / "metrics.json", m);
        if (first) {
            write_text(fs::path(o.out_dir) / "reliability.csv", rel);
            write_text(fs::path(o.out_dir) / "conf_unc.csv", cu);
            first = false;
        }
    }
    finish_report(o, out);
    return kExitOk;
}

int cmd_ood(Options& o, std::ostream& out) {
    const EmbeddingBank bank = require_bank(o.bank);
    const EmbeddingBank ood_bank = require_bank(o.ood_bank, "--ood-bank");
    if (ood_bank.dim != bank.dim || ood_bank.tokens_per_image != bank.tokens_per_image) {
        throw ShapeMismatch("OOD bank shape differs from the ID bank");
    }
    const MaxEntropyPolicy policy = parse_max_entropy(o.max_entropy);
    const Matrix text = bank.text_embeddings.cast<double>();
    std::vector<std::size_t> ood_ids(ood_bank.images.size());
    for (std::size_t i = 0; i < ood_ids.size(); ++i) ood_ids[i] = i;
    json per_seed = json::array();
    bool first = true;
    for (std::uint64_t seed : o.seeds) {
        const fs::path dir = seed_dir(o, seed);
        const SeedRun run = obtain_model(bank, o, seed, dir);
        const std::vector<std::size_t>& id_ids = run.episode.test_indices;
        const OODReport r = ood_evaluate(run.model, records_at(bank, id_ids), records_at(ood_bank, ood_ids), text,
                                         o.mc_samples, seed, policy, o.jobs);
        const std::string csv = ood_csv(id_ids, ood_ids, r);
        write_text(dir / "ood.csv", csv);
        json j = {{"seed", seed},
                  {"id_mean_entropy", r.id_stats.mean_entropy},
                  {"id_mean_confidence", r.id_stats.mean_confidence},
                  {"ood_mean_entropy", r.ood_stats.mean_entropy},
                  {"ood_mean_confidence", r.ood_stats.mean_confidence},
                  {"id_max_entropy", r.id_norm.max_entropy},
                  {"ood_max_entropy", r.ood_norm.max_entropy},
                  {"id", summaries_to_json(id_ids, r.id)},
                  {"ood", summaries_to_json(ood_ids, r.ood)}};
        write_json(dir / "ood.json", j);
        j.erase("id");
        j.erase("ood");
        per_seed.push_back(j);
        if (first) {
            write_text(fs::path(o.out_dir) / "ood.csv", csv);
            first = false;
        }
    }
    json summary = {{"config", config_json(o)}, {"per_seed", per_seed}};
    write_json(fs::path(o.out_dir) / "ood_summary.json", summary);
    out << summary.dump(2) << "\n";
    return kExitOk;
}

int cmd_base_new(Options& o, std::ostream& out) {
    const EmbeddingBank bank = require_bank(o.bank);
    auto [base, novel] = split_base_new(bank);
    const std::vector<std::size_t> base_test = indices_with_split(base, SplitTag::Test);
    const std::vector<std::size_t> new_test = indices_with_split(novel, SplitTag::Test);
    json per_seed = json::array();
    std::vector<double> base_acc, new_acc;
    for (std::uint64_t seed : o.seeds) {
        const Episode ep = sample_episode(base, o.shots, seed);
        const TrainedModel model = train(base, ep, train_config(o, seed));
        const double b = evaluate_accuracy(model, base, base_test, o.jobs);
        const double n = evaluate_accuracy(model, novel, new_test, o.jobs);
        base_acc.push_back(b);
        new_acc.push_back(n);
        per_seed.push_back({{"seed", seed}, {"base", b}, {"new", n}, {"harmonic_mean", harmonic_mean(b, n)}});
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    const double zb = zero_shot_accuracy(base, base_test, o.tau);
    const double zn = zero_shot_accuracy(novel, new_test, o.tau);
    json summary = {{"config", config_json(o)},
                    {"base_classes", base.num_classes()},
                    {"new_classes", novel.num_classes()},
                    {"per_seed", per_seed},
                    {"base", mean(base_acc)},
                    {"new", mean(new_acc)},
                    {"harmonic_mean", harmonic_mean(mean(base_acc), mean(new_acc))},
                    {"zero_shot", {{"base", zb}, {"new", zn}, {"harmonic_mean", harmonic_mean(zb, zn)}}}};
    fs::create_directories(o.out_dir);
    write_json(fs::path(o.out_dir) / "base_new.json", summary);
    out << summary.dump(2) << "\n";
    return kExitOk;
}

int cmd_variance(Options& o, std::ostream& out) {
    const EmbeddingBank bank = require_bank(o.bank);
    const std::vector<std::size_t> ids = split_indices(bank, o.split);
    const Matrix feats = global_features(bank, ids);
    const std::vector<std::uint32_t> labels = labels_of(bank, ids);
    const VarianceStats st = variance_stats(feats, labels);
    json j = {{"split", o.split},
              {"num_images", ids.size()},
              {"intra_class", st.intra_class},
              {"inter_class", st.num_classes >= 2 ? json(st.inter_class) : json(nullptr)},
              {"per_class_intra", st.per_class_intra},
              {"estimator", "mean squared deviation from the class mean (intra) or from the mean of class means "
                            "(inter), divided by the feature dimension"}};
    out << j.dump(2) << "\n";
    if (o.out_dir != ".") {
        fs::create_directories(o.out_dir);
        write_json(fs::path(o.out_dir) / "variance.json", j);
    }
    return kExitOk;
}

int cmd_report(Options& o, std::ostream& out) {
    finish_report(o, out);
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Adaptive prompt tuning on precomputed embedding banks", "apt"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic embedding bank");
    synth->add_option("--classes", o.synth.num_classes)->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--dim", o.synth.dim)->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--tokens", o.synth.tokens_per_image, "Tokens per image (row 0 + patches)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    synth->add_option("--per-class", o.synth.samples_per_class)->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--intra", o.synth.intra_class_sigma)->capture_default_str()->check(CLI::NonNegativeNumber);
    synth->add_option("--inter", o.synth.inter_class_sigma)->capture_default_str()->check(CLI::NonNegativeNumber);
    synth->add_option("--text-noise", o.synth.text_noise, "Text-row noise relative to --inter")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    synth->add_option("--modality-gap", o.synth.modality_gap, "Shared text offset relative to --inter")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    synth->add_option("--patch-noise", o.synth.patch_noise, "Patch noise relative to --intra")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    synth->add_option("-o,--output", o.output, "Output bank path");
    synth->add_option("--ood-output", o.ood_output, "Also write an OOD bank here");
    synth->add_option("--ood-count", o.ood.count)->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--ood-distance", o.ood.min_distance_sigmas, "Minimum distance in sigma * sqrt(dim)")
        ->capture_default_str();
    synth->add_option("--ood-sigma", o.ood_sigma, "OOD noise scale (default: --intra)");
    add_seeds(synth, o);

    auto* extract = app.add_subcommand("extract-manifest", "Validate an extractor-produced bank and manifest");
    add_bank(extract, o);
    extract->add_option("--expect-dim", o.expect_dim);
    extract->add_option("--expect-tokens", o.expect_tokens);

    auto* zeroshot = app.add_subcommand("zeroshot", "Zero-shot accuracy of the untuned text rows");
    add_bank(zeroshot, o);
    add_tau(zeroshot, o);
    add_out(zeroshot, o);
    zeroshot->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "Train the cross-attention block per seed");
    add_bank(train_cmd, o);
    add_training(train_cmd, o);
    add_tau(train_cmd, o);
    add_seeds(train_cmd, o);
    add_out(train_cmd, o);
    add_jobs(train_cmd, o);
    add_uq(train_cmd, o);

    auto* eval = app.add_subcommand("eval", "Deterministic accuracy of a checkpoint");
    add_bank(eval, o);
    add_checkpoint(eval, o);
    add_tau(eval, o);
    add_out(eval, o);
    add_jobs(eval, o);
    add_seeds(eval, o);
    eval->add_option("--kv-policy", o.kv_policy)->check(CLI::IsMember({"all", "patches-only", "cls-only"}));
    eval->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();

    auto* uq = app.add_subcommand("uq", "Monte-Carlo dropout calibration on the test split");
    add_bank(uq, o);
    add_checkpoint(uq, o);
    add_training(uq, o);
    add_tau(uq, o);
    add_seeds(uq, o);
    add_out(uq, o);
    add_jobs(uq, o);
    add_uq(uq, o);

    auto* ood = app.add_subcommand("ood", "Entropy/confidence on in- vs out-of-distribution data");
    add_bank(ood, o);
    ood->add_option("--ood-bank", o.ood_bank, "Out-of-distribution bank");
    add_checkpoint(ood, o);
    add_training(ood, o);
    add_tau(ood, o);
    add_seeds(ood, o);
    add_out(ood, o);
    add_jobs(ood, o);
    add_uq(ood, o);

    auto* base_new = app.add_subcommand("base-new", "Train on base classes, evaluate on base and new");
    add_bank(base_new, o);
    add_training(base_new, o);
    add_tau(base_new, o);
    add_seeds(base_new, o);
    add_out(base_new, o);
    add_jobs(base_new, o);

    auto* variance = app.add_subcommand("variance", "Intra-/inter-class variance of image features");
    add_bank(variance, o);
    add_out(variance, o);
    variance->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();

    auto* report = app.add_subcommand("report", "Aggregate seed_*/metrics.json into report.json");
    add_out(report, o);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) {
        reversed.pop_back();  // program name
    }
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "apt: " << e.what() << "\n";
        for (CLI::App* sub : app.get_subcommands()) {
            err << sub->help();
        }
        return kExitUsage;
    }

    try {
        if (o.seeds.empty()) {
            throw UsageError("--seed needs at least one value");
        }
        if (synth->parsed()) return cmd_synth(o, out);
        if (extract->parsed()) return cmd_extract_manifest(o, out);
        if (zeroshot->parsed()) return cmd_zeroshot(o, out);
        if (train_cmd->parsed()) return cmd_train(o, out);
        if (eval->parsed()) return cmd_eval(o, out);
        if (uq->parsed()) return cmd_uq(o, out);
        if (ood->parsed()) return cmd_ood(o, out);
        if (base_new->parsed()) return cmd_base_new(o, out);
        if (variance->parsed()) return cmd_variance(o, out);
        if (report->parsed()) return cmd_report(o, out);
    } catch (const UsageError& e) {
        err << "apt: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UnsupportedShots& e) {
        err << "apt: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "apt: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    return dispatch(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace apt::cli
