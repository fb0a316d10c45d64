#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "apt/cli.hpp"
#include "apt/embedding_bank.hpp"
#include "apt/errors.hpp"
#include "apt/report.hpp"
#include "support.hpp"

using namespace apt;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "apt");
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const std::filesystem::path& p) { return json::parse(slurp(p)); }

}  // namespace

TEST_CASE("synth then zeroshot") {
    test::TempDir dir("cli_zs");
    const std::string bank = (dir / "bank.aptb").string();
    REQUIRE(run({"synth", "--classes", "4", "--dim", "16", "--seed", "7", "-o", bank}).code == 0);
    const Run zs = run({"zeroshot", "--bank", bank});
    CHECK(zs.code == 0);
    REQUIRE(zs.out.rfind("accuracy: ", 0) == 0);
    const double acc = std::stod(zs.out.substr(10));
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
}

TEST_CASE("train is reproducible byte for byte") {
    test::TempDir dir("cli_train");
    const std::string bank = (dir / "bank.aptb").string();
    REQUIRE(run({"synth", "--intra", "0.8", "--seed", "1", "-o", bank}).code == 0);
    const std::string a = (dir / "a").string(), b = (dir / "b").string();
    REQUIRE(run({"train", "--bank", bank, "--shots", "16", "--seed", "1", "--out", a}).code == 0);
    REQUIRE(run({"train", "--bank", bank, "--shots", "16", "--seed", "1", "--out", b}).code == 0);
    const std::string ca = slurp(dir / "a" / "seed_1" / "checkpoint.aptc");
    CHECK_FALSE(ca.empty());
    CHECK(ca == slurp(dir / "b" / "seed_1" / "checkpoint.aptc"));
    CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));

    const Run ev = run({"eval", "--bank", bank, "--checkpoint", (dir / "a" / "seed_1" / "checkpoint.aptc").string()});
    CHECK(ev.code == 0);
    CHECK(ev.out.find("accuracy") != std::string::npos);
}

TEST_CASE("unsupported shot count is a usage error") {
    const Run r = run({"train", "--shots", "3"});
    CHECK(r.code == cli::kExitUsage);
    for (const char* s : {"1", "2", "4", "8", "16"}) CHECK(r.err.find(s) != std::string::npos);
    CHECK(run({"train", "--bogus"}).code == cli::kExitUsage);
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"zeroshot", "--bank", "/nonexistent/x.aptb"}).code == cli::kExitUsage);
}

TEST_CASE("uq over three seeds and the report schema") {
    test::TempDir dir("cli_uq");
    const std::string bank = (dir / "bank.aptb").string();
    REQUIRE(run({"synth", "--intra", "0.8", "--seed", "2", "--per-class", "16", "-o", bank}).code == 0);
    const std::string out = (dir / "run").string();
    const Run r = run({"uq", "--bank", bank, "--shots", "4", "--epochs", "5", "--seed", "1,2,3", "--mc-samples", "10",
                       "--out", out, "--jobs", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json rep = read_json(dir / "run" / "report.json");
    for (const char* key : {"accuracy_mean", "accuracy_per_seed", "ece", "mean_entropy"}) CHECK(rep.contains(key));
    CHECK(rep["accuracy_per_seed"].size() == 3);
    CHECK(rep["config"]["mc_samples"] == 10);
    CHECK(rep == run_report(dir / "run"));

    const std::string csv = slurp(dir / "run" / "reliability.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 10);
    for (int s = 1; s <= 3; ++s) {
        CHECK(std::filesystem::exists(dir / "run" / ("seed_" + std::to_string(s)) / "conf_unc.csv"));
    }

    const std::string again = (dir / "run2").string();
    REQUIRE(run({"uq", "--bank", bank, "--shots", "4", "--epochs", "5", "--seed", "1,2,3", "--mc-samples", "10",
                 "--out", again, "--jobs", "1"})
                .code == 0);
    CHECK(slurp(dir / "run" / "conf_unc.csv") == slurp(dir / "run2" / "conf_unc.csv"));
    CHECK(slurp(dir / "run" / "report.json") == slurp(dir / "run2" / "report.json"));
}

TEST_CASE("default recipe constants reach report.json") {
    test::TempDir dir("cli_defaults");
    const std::string bank = (dir / "bank.aptb").string();
    REQUIRE(run({"synth", "--seed", "3", "--per-class", "8", "-o", bank}).code == 0);
    REQUIRE(run({"uq", "--bank", bank, "--shots", "1", "--out", (dir / "run").string()}).code == 0);
    const json cfg = read_json(dir / "run" / "report.json")["config"];
    CHECK(cfg["lr"] == 0.001);
    CHECK(cfg["dropout"] == 0.2);
    CHECK(cfg["heads"] == 8);
    CHECK(cfg["mc_samples"] == 100);
    CHECK(cfg["epochs"] == 50);
}

TEST_CASE("ood, base-new and variance") {
    test::TempDir dir("cli_misc");
    const std::string bank = (dir / "bank.aptb").string(), ood = (dir / "ood.aptb").string();
    REQUIRE(run({"synth", "--intra", "0.8", "--seed", "1", "--per-class", "12", "-o", bank, "--ood-output", ood}).code ==
            0);
    const Run o = run({"ood", "--bank", bank, "--ood-bank", ood, "--shots", "4", "--epochs", "3", "--mc-samples", "5",
                       "--out", (dir / "o").string()});
    CHECK_MESSAGE(o.code == 0, o.err);
    CHECK(std::filesystem::exists(dir / "o" / "ood.csv"));

    const Run bn = run({"base-new", "--bank", bank, "--shots", "4", "--epochs", "3", "--out", (dir / "bn").string()});
    CHECK_MESSAGE(bn.code == 0, bn.err);

    const Run v = run({"variance", "--bank", bank});
    CHECK(v.code == 0);
    CHECK(v.out.find("intra") != std::string::npos);
}

TEST_CASE("report on an empty directory") {
    test::TempDir dir("cli_report");
    CHECK_THROWS_AS(run_report(dir.path()), MissingArtifacts);
    CHECK(run({"report", "--out", dir.path().string()}).code == cli::kExitFailure);
}

TEST_CASE("extract-manifest validates the extractor contract") {
    test::TempDir dir("cli_manifest");
    SynthSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 4;
    spec.dim = 8;
    spec.tokens_per_image = 3;
    EmbeddingBank b = generate_synthetic_bank(spec);
    b.metadata = {{"template", "a photo of a {}."},
                  {"model", "ViT-B/16"},
                  {"split_ratios", "[0.5, 0.2, 0.3]"},
                  {"split_seed", "0"}};
    save_bank(b, dir / "x.aptb");
    const std::string path = (dir / "x.aptb").string();

    const Run ok = run({"extract-manifest", "--bank", path, "--expect-dim", "8", "--expect-tokens", "3"});
    REQUIRE(ok.code == 0);
    const json summary = json::parse(ok.out);
    CHECK(summary["valid"] == true);
    CHECK(summary["num_images"] == 8);
    CHECK(summary["num_classes"] == 2);

    CHECK(run({"extract-manifest", "--bank", path, "--expect-dim", "512"}).code == cli::kExitFailure);

    b.metadata.erase("split_seed");
    save_bank(b, dir / "x.aptb");
    const Run missing = run({"extract-manifest", "--bank", path});
    CHECK(missing.code == cli::kExitFailure);
    CHECK(missing.err.find("split_seed") != std::string::npos);
}
