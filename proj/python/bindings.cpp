#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "apt/analysis.hpp"
#include "apt/cli.hpp"
#include "apt/errors.hpp"
#include "apt/report.hpp"
#include "apt/trainer.hpp"
#include "apt/uq.hpp"

namespace py = pybind11;
using namespace apt;

namespace {

using Indices = std::vector<std::size_t>;
using Labels = std::vector<std::uint32_t>;

std::vector<std::size_t> all_indices(const EmbeddingBank& b) {
    std::vector<std::size_t> ids(b.images.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return ids;
}

Matrix image_tokens(const EmbeddingBank& b, std::size_t i, std::size_t view) {
    const ImageRecord& r = b.images.at(i);
    return r.views.at(view).cast<double>();
}

py::dict summary_dict(const PredictiveSummary& s) {
    py::dict d;
    d["mean_probs"] = Vector(s.mean_probs);
    d["predicted"] = s.predicted;
    d["entropy"] = s.entropy;
    d["confidence"] = s.confidence;
    d["num_samples"] = s.num_samples;
    d["correct"] = s.correct;
    return d;
}

}  // namespace

PYBIND11_MODULE(_apt, m) {
    m.doc() = "Adaptive prompt tuning over frozen embedding banks";

    auto base = py::register_exception<Error>(m, "AptError", PyExc_RuntimeError);
#define APT_PY_ERROR(Name) py::register_exception<Name>(m, #Name, base.ptr())
    APT_PY_ERROR(MalformedHeader);
    APT_PY_ERROR(TruncatedFile);
    APT_PY_ERROR(InvariantViolation);
    APT_PY_ERROR(IoFailure);
    APT_PY_ERROR(InvalidSpec);
    APT_PY_ERROR(InsufficientSamples);
    APT_PY_ERROR(TooFewClasses);
    APT_PY_ERROR(DimMismatch);
    APT_PY_ERROR(ShapeMismatch);
    APT_PY_ERROR(NonFiniteInput);
    APT_PY_ERROR(StaleCache);
    APT_PY_ERROR(InvalidEpsilon);
    APT_PY_ERROR(ZeroNormVector);
    APT_PY_ERROR(NonPositiveTemperature);
    APT_PY_ERROR(LabelOutOfRange);
    APT_PY_ERROR(UnsupportedShots);
    APT_PY_ERROR(StepOutOfRange);
    APT_PY_ERROR(DivergenceDetected);
    APT_PY_ERROR(MalformedCheckpoint);
    APT_PY_ERROR(InvalidSampleCount);
    APT_PY_ERROR(DegenerateMax);
    APT_PY_ERROR(EmptyInput);
    APT_PY_ERROR(EmptySet);
    APT_PY_ERROR(LengthMismatch);
    APT_PY_ERROR(BothZero);
    APT_PY_ERROR(EmptyClass);
    APT_PY_ERROR(UsageError);
    APT_PY_ERROR(MissingArtifacts);
#undef APT_PY_ERROR

    py::enum_<SplitTag>(m, "SplitTag")
        .value("TRAIN_POOL", SplitTag::TrainPool)
        .value("VAL", SplitTag::Val)
        .value("TEST", SplitTag::Test);

    py::class_<EmbeddingBank>(m, "EmbeddingBank")
        .def_readonly("dim", &EmbeddingBank::dim)
        .def_readonly("tokens_per_image", &EmbeddingBank::tokens_per_image)
        .def_readonly("class_names", &EmbeddingBank::class_names)
        .def_readwrite("metadata", &EmbeddingBank::metadata)
        .def_property_readonly("num_classes", &EmbeddingBank::num_classes)
        .def_property_readonly("num_images", [](const EmbeddingBank& b) { return b.images.size(); })
        .def_property_readonly("text_embeddings", [](const EmbeddingBank& b) { return Matrix(b.text_embeddings.cast<double>()); })
        .def_property_readonly("labels", [](const EmbeddingBank& b) { return labels_of(b, all_indices(b)); })
        .def_property_readonly("splits", [](const EmbeddingBank& b) {
            std::vector<SplitTag> s;
            for (const auto& r : b.images) s.push_back(r.split);
            return s;
        })
        .def("tokens", &image_tokens, py::arg("index"), py::arg("view") = 0)
        .def("global_features", [](const EmbeddingBank& b) { return global_features(b, all_indices(b)); })
        .def("indices", &indices_with_split, py::arg("split"))
        .def("__eq__", [](const EmbeddingBank& a, const EmbeddingBank& b) { return a == b; })
        .def("__len__", [](const EmbeddingBank& b) { return b.images.size(); });

    m.def("load_bank", &load_bank, py::arg("path"));
    m.def("save_bank", &save_bank, py::arg("bank"), py::arg("path"));
    m.def("encode_bank", [](const EmbeddingBank& b) {
        const auto bytes = encode_bank(b);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    });
    m.def("decode_bank", [](py::bytes data) {
        const std::string_view s = data;
        return decode_bank({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    });

    m.def(
        "generate_synthetic_bank",
        [](std::uint32_t num_classes, std::uint32_t dim, std::uint32_t tokens_per_image, std::uint32_t samples_per_class,
           double intra, double inter, double text_noise, double modality_gap, std::uint64_t seed) {
            SynthSpec s;
            s.num_classes = num_classes;
            s.dim = dim;
            s.tokens_per_image = tokens_per_image;
            s.samples_per_class = samples_per_class;
            s.intra_class_sigma = intra;
            s.inter_class_sigma = inter;
            s.text_noise = text_noise;
            s.modality_gap = modality_gap;
            s.seed = seed;
            return generate_synthetic_bank(s);
        },
        py::arg("num_classes") = 4, py::arg("dim") = 16, py::arg("tokens_per_image") = 5,
        py::arg("samples_per_class") = 32, py::arg("intra_class_sigma") = 0.05, py::arg("inter_class_sigma") = 1.0,
        py::arg("text_noise") = 1.0, py::arg("modality_gap") = 0.0, py::arg("seed") = 0);

    m.def(
        "generate_ood_bank",
        [](const EmbeddingBank& ref, std::uint32_t count, double distance, double sigma, std::uint64_t seed) {
            return generate_ood_bank(ref, OodSpec{count, distance, sigma, seed});
        },
        py::arg("reference"), py::arg("count") = 64, py::arg("min_distance_sigmas") = 5.0, py::arg("sigma") = 0.8,
        py::arg("seed") = 0);

    py::class_<Episode>(m, "Episode")
        .def_readonly("shots", &Episode::shots)
        .def_readonly("seed", &Episode::seed)
        .def_readonly("train_indices", &Episode::train_indices)
        .def_readonly("val_indices", &Episode::val_indices)
        .def_readonly("test_indices", &Episode::test_indices)
        .def("__eq__", [](const Episode& a, const Episode& b) { return a == b; });
    m.def("sample_episode", &sample_episode, py::arg("bank"), py::arg("shots"), py::arg("seed"));
    m.def("split_base_new", &split_base_new, py::arg("bank"));

    py::class_<APTParams>(m, "APTParams")
        .def_readonly("dim", &APTParams::dim)
        .def_readonly("heads", &APTParams::heads)
        .def_readonly("ff_dim", &APTParams::ff_dim)
        .def_readwrite("dropout_rate", &APTParams::dropout_rate)
        .def_property_readonly("num_values", [](const APTParams& p) { return p.weights.num_values(); })
        .def_property(
            "values", [](const APTParams& p) { return p.weights.flatten(); },
            [](APTParams& p, const std::vector<double>& v) { p.weights.assign(v); })
        .def("__eq__", [](const APTParams& a, const APTParams& b) { return a == b; });

    m.def("init_params", &init_params, py::arg("dim"), py::arg("heads"), py::arg("ff_dim"), py::arg("seed"),
          py::arg("dropout_rate") = 0.0);
    m.def(
        "refine",
        [](const APTParams& p, const Matrix& text, const Matrix& tokens, std::optional<std::uint64_t> mc_seed) {
            return refine(p, text, tokens, mc_seed ? DropoutMode::monte_carlo(*mc_seed) : DropoutMode::off());
        },
        py::arg("params"), py::arg("text"), py::arg("tokens"), py::arg("mc_seed") = py::none(),
        "W' for one image; dropout is active only when mc_seed is given.");
    m.def("attention", [](const APTParams& p, const Matrix& text, const Matrix& tokens) {
        return forward(p, text, tokens, DropoutMode::off()).cache.attention;
    });
    m.def("finite_diff_check", &finite_diff_check, py::arg("params"), py::arg("text"), py::arg("tokens"),
          py::arg("epsilon") = 1e-4);

    m.def("cosine_similarity", py::overload_cast<const RowVector&, const RowVector&>(&cosine_similarity));
    m.def(
        "class_probabilities",
        [](const Matrix& rows, const RowVector& z, double tau) { return Vector(class_probabilities(rows, z, tau).probs); },
        py::arg("rows"), py::arg("z"), py::arg("tau") = 0.01);
    m.def(
        "zero_shot_predict",
        [](const Matrix& rows, const RowVector& z, double tau) { return zero_shot_predict(rows, z, tau).first; },
        py::arg("rows"), py::arg("z"), py::arg("tau") = 0.01);

    py::enum_<KvPolicy>(m, "KvPolicy")
        .value("ALL", KvPolicy::All)
        .value("PATCHES_ONLY", KvPolicy::PatchesOnly)
        .value("CLS_ONLY", KvPolicy::ClsOnly);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("shots", &TrainConfig::shots)
        .def_readwrite("lr0", &TrainConfig::lr0)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("dropout_rate", &TrainConfig::dropout_rate)
        .def_readwrite("heads", &TrainConfig::heads)
        .def_readwrite("ff_dim", &TrainConfig::ff_dim)
        .def_readwrite("tau", &TrainConfig::tau)
        .def_readwrite("kv_policy", &TrainConfig::kv_policy)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("eval_every", &TrainConfig::eval_every)
        .def_property_readonly("resolved_epochs", &TrainConfig::resolved_epochs);

    py::class_<TrainedModel>(m, "TrainedModel")
        .def_readwrite("params", &TrainedModel::params)
        .def_readwrite("tau", &TrainedModel::tau)
        .def_readwrite("kv_policy", &TrainedModel::kv_policy)
        .def_readonly("class_names", &TrainedModel::class_names)
        .def_property_readonly("history", [](const TrainedModel& t) {
            py::list out;
            for (const HistoryEntry& h : t.history) out.append(py::make_tuple(h.epoch, h.loss, h.val_acc));
            return out;
        });

    m.def("epochs_for_shots", &epochs_for_shots);
    m.def("cosine_lr", &cosine_lr, py::arg("step"), py::arg("total_steps"), py::arg("lr0"));
    m.def("initial_model", &initial_model, py::arg("bank"), py::arg("config"));
    m.def("train", &train, py::arg("bank"), py::arg("episode"), py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def(
        "predict",
        [](const TrainedModel& model, const EmbeddingBank& bank, const Indices& ids, unsigned jobs) {
            return predict(model, bank, ids, jobs);
        },
        py::arg("model"), py::arg("bank"), py::arg("indices"), py::arg("jobs") = 1);
    m.def(
        "evaluate_accuracy",
        [](const TrainedModel& model, const EmbeddingBank& bank, const Indices& ids, unsigned jobs) {
            return evaluate_accuracy(model, bank, ids, jobs);
        },
        py::arg("model"), py::arg("bank"), py::arg("indices"), py::arg("jobs") = 1);
    m.def(
        "zero_shot_accuracy",
        [](const EmbeddingBank& bank, const Indices& ids, double tau) { return zero_shot_accuracy(bank, ids, tau); },
        py::arg("bank"), py::arg("indices"), py::arg("tau") = 0.01);
    m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    m.def(
        "mc_predict",
        [](const TrainedModel& model, const EmbeddingBank& bank, const std::vector<std::size_t>& indices,
           std::uint32_t samples, std::uint64_t seed, bool labels_known, const std::string& max_entropy,
           unsigned jobs) {
            const Matrix text = bank.text_embeddings.cast<double>();
            std::vector<PredictiveSummary> s;
            {
                py::gil_scoped_release release;
                s = mc_predict_set(model, records_at(bank, indices), text, samples, seed, labels_known, jobs);
            }
            normalize_confidence(s, parse_max_entropy(max_entropy), bank.num_classes());
            py::list out;
            for (const auto& x : s) out.append(summary_dict(x));
            return out;
        },
        py::arg("model"), py::arg("bank"), py::arg("indices"), py::arg("samples") = 100, py::arg("seed") = 0,
        py::arg("labels_known") = true, py::arg("max_entropy") = "empirical", py::arg("jobs") = 1);

    m.def("entropy", py::overload_cast<const Vector&>(&entropy));
    m.def("confidence", &confidence, py::arg("entropy"), py::arg("max_entropy"));
    m.def(
        "ece",
        [](const std::vector<double>& conf, const std::vector<bool>& correct, std::uint32_t bins) {
            if (conf.size() != correct.size()) throw LengthMismatch("confidence and correct differ in length");
            std::vector<CalibrationRecord> recs;
            for (std::size_t i = 0; i < conf.size(); ++i) recs.push_back({conf[i], correct[i]});
            const CalibrationReport rep = ece(recs, bins);
            py::list rows;
            for (const ReliabilityRow& r : reliability_data(rep))
                rows.append(py::make_tuple(r.bin_lo, r.bin_hi, r.count, r.mean_conf, r.mean_acc));
            return py::make_tuple(rep.ece, rows);
        },
        py::arg("confidence"), py::arg("correct"), py::arg("bins") = 10);

    m.def(
        "accuracy", [](const Labels& p, const Labels& l) { return accuracy(p, l); }, py::arg("predictions"),
        py::arg("labels"));
    m.def("harmonic_mean", &harmonic_mean, py::arg("base_acc"), py::arg("new_acc"));
    m.def(
        "intra_class_variance",
        [](const Matrix& x, const Labels& l, std::size_t k) { return intra_class_variance(x, l, k); },
        py::arg("features"), py::arg("labels"), py::arg("num_classes") = 0);
    m.def(
        "inter_class_variance",
        [](const Matrix& x, const Labels& l, std::size_t k) { return inter_class_variance(x, l, k); },
        py::arg("features"), py::arg("labels"), py::arg("num_classes") = 0);
    m.def("run_report", [](const std::filesystem::path& dir) { return run_report(dir).dump(); });

    m.def(
        "cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "apt");
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::dispatch(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one apt subcommand; returns (exit_code, stdout, stderr).");
}
