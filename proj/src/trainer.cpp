#include "apt/trainer.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "apt/classifier.hpp"
#include "apt/errors.hpp"
#include "apt/parallel.hpp"
#include "apt/random.hpp"

namespace apt {

namespace {

// Stream ids under TrainConfig::seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDropoutStream = 2;
constexpr std::uint64_t kViewStream = 3;

void check_episode(const EmbeddingBank& bank, const Episode& episode) {
    auto in_range = [&](std::span<const std::size_t> ids, const char* what) {
        for (std::size_t i : ids) {
            if (i >= bank.images.size()) {
                throw InvalidSpec(std::string(what) + " index " + std::to_string(i) + " outside the bank");
            }
        }
    };
    in_range(episode.train_indices, "train");
    in_range(episode.val_indices, "val");
    in_range(episode.test_indices, "test");
    for (std::size_t i : episode.train_indices) {
        if (bank.images[i].split != SplitTag::TrainPool) {
            throw InvalidSpec("train index " + std::to_string(i) + " is not a train_pool record");
        }
    }
}

bool all_finite(const BlockWeights& w) {
    bool ok = true;
    w.for_each([&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
}

void add_scaled(BlockWeights& target, const BlockWeights& delta, double scale) {
    std::vector<double> t = target.flatten();
    const std::vector<double> d = delta.flatten();
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] += scale * d[i];
    }
    target.assign(t);
}

}  // namespace

KvPolicy parse_kv_policy(std::string_view text) {
    if (text == "all") return KvPolicy::All;
    if (text == "patches-only") return KvPolicy::PatchesOnly;
    if (text == "cls-only") return KvPolicy::ClsOnly;
    throw UsageError("unknown kv policy '" + std::string(text) + "' (expected all, patches-only or cls-only)");
}

std::string_view to_string(KvPolicy policy) {
    switch (policy) {
        case KvPolicy::All: return "all";
        case KvPolicy::PatchesOnly: return "patches-only";
        case KvPolicy::ClsOnly: return "cls-only";
    }
    return "all";
}

Matrix select_kv(const FloatMatrix& tokens, KvPolicy policy) {
    switch (policy) {
        case KvPolicy::All: return tokens.cast<double>();
        case KvPolicy::ClsOnly: return tokens.topRows(1).cast<double>();
        case KvPolicy::PatchesOnly:
            if (tokens.rows() < 2) {
                throw ShapeMismatch("patches-only policy needs tokens_per_image >= 2");
            }
            return tokens.bottomRows(tokens.rows() - 1).cast<double>();
    }
    return tokens.cast<double>();
}

std::uint32_t TrainConfig::resolved_epochs() const { return epochs ? *epochs : epochs_for_shots(shots); }

bool HistoryEntry::operator==(const HistoryEntry& o) const {
    auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return epoch == o.epoch && same(loss, o.loss) && same(val_acc, o.val_acc);
}

std::uint32_t epochs_for_shots(std::uint32_t shots) {
    switch (shots) {
        case 1: return 50;
        case 2:
        case 4: return 100;
        case 8:
        case 16: return 150;
        default:
            throw UnsupportedShots("shots must be one of 1, 2, 4, 8, 16 (got " + std::to_string(shots) +
                                   "); pass an explicit epoch count instead");
    }
}

double cosine_lr(std::uint32_t step, std::uint32_t total_steps, double lr0) {
    if (total_steps < 1 || step > total_steps) {
        throw StepOutOfRange("step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
    }
    if (step == total_steps) {
        return 0.0;
    }
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

TrainedModel initial_model(const EmbeddingBank& bank, const TrainConfig& config) {
    if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
        throw InvalidSpec("dropout rate must lie in [0, 1)");
    }
    if (!(config.tau > 0.0)) {
        throw NonPositiveTemperature("tau must be positive");
    }
    TrainedModel model;
    const std::uint32_t ff_dim = config.ff_dim ? *config.ff_dim : 4 * bank.dim;
    // Checkpoints hold the rate as f32; keep memory and file in agreement.
    const double rate = static_cast<float>(config.dropout_rate);
    model.params = init_params(bank.dim, config.heads, ff_dim, derive_seed(config.seed, kInitStream), rate);
    model.tau = config.tau;
    model.kv_policy = config.kv_policy;
    model.class_names = bank.class_names;
    return model;
}

TrainedModel train(const EmbeddingBank& bank, const Episode& episode, const TrainConfig& config) {
    check_episode(bank, episode);
    if (!(config.lr0 >= 0.0) || !std::isfinite(config.lr0)) {
        throw InvalidSpec("learning rate must be a non-negative finite number");
    }
    if (config.batch_size == 0 || config.eval_every == 0) {
        throw InvalidSpec("batch_size and eval_every must be positive");
    }
    TrainedModel model = initial_model(bank, config);
    const std::uint32_t epochs = config.resolved_epochs();
    const Matrix text = bank.text_embeddings.cast<double>();

    std::vector<std::size_t> order = episode.train_indices;
    const std::uint64_t shuffle_root = derive_seed(config.seed, kShuffleStream);
    const std::uint64_t dropout_root = derive_seed(config.seed, kDropoutStream);
    const std::uint64_t view_root = derive_seed(config.seed, kViewStream);

    for (std::uint32_t epoch = 0; epoch < epochs; ++epoch) {
        HistoryEntry entry;
        entry.epoch = epoch;
        entry.val_acc = (epoch % config.eval_every == 0)
                            ? evaluate_accuracy(model, bank, episode.val_indices)
                            : std::numeric_limits<double>::quiet_NaN();

        const double lr = cosine_lr(epoch, epochs, config.lr0);
        Rng shuffle_rng(derive_seed(shuffle_root, epoch));
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        Rng view_rng(derive_seed(view_root, epoch));
        const std::uint64_t epoch_dropout = derive_seed(dropout_root, epoch);

        double loss_sum = 0.0;
        ParamGrads accum = BlockWeights::zeros(model.params.dim, model.params.ff_dim);
        std::uint32_t pending = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const ImageRecord& rec = bank.images[order[pos]];
            const FloatMatrix& view = rec.views.size() > 1 ? rec.views[view_rng.below(rec.views.size())]
                                                           : rec.views.front();
            const RowVector z = view.row(0).cast<double>();
            ForwardResult fwd = forward(model.params, text, select_kv(view, model.kv_policy),
                                        DropoutMode::train(derive_seed(epoch_dropout, pos)));
            const ProbVector probs = class_probabilities(fwd.output, z, model.tau);
            const LossGrad lg = loss_and_grad(probs, rec.label);
            if (!std::isfinite(lg.loss)) {
                throw DivergenceDetected("non-finite loss in epoch " + std::to_string(epoch));
            }
            loss_sum += lg.loss;
            const Matrix d_out = cosine_rows_backward(fwd.output, z, lg.d_cos);
            add_scaled(accum, backward(model.params, fwd.cache, d_out), 1.0);
            ++pending;
            if (pending == config.batch_size || pos + 1 == order.size()) {
                add_scaled(model.params.weights, accum, -lr / pending);
                accum = BlockWeights::zeros(model.params.dim, model.params.ff_dim);
                pending = 0;
                if (!all_finite(model.params.weights)) {
                    throw DivergenceDetected("non-finite parameters in epoch " + std::to_string(epoch));
                }
            }
        }
        entry.loss = order.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : loss_sum / static_cast<double>(order.size());
        model.history.push_back(entry);
    }
    return model;
}

std::vector<std::uint32_t> predict(const TrainedModel& model, const EmbeddingBank& bank,
                                   std::span<const std::size_t> indices, unsigned jobs) {
    const Matrix text = bank.text_embeddings.cast<double>();
    std::vector<std::uint32_t> out(indices.size());
    parallel_for(indices.size(), jobs, [&](std::size_t i) {
        const FloatMatrix& tokens = bank.images.at(indices[i]).tokens();
        const Matrix refined = refine(model.params, text, select_kv(tokens, model.kv_policy), DropoutMode::off());
        out[i] = argmax(cosine_logits(refined, tokens.row(0).cast<double>()));
    });
    return out;
}

double evaluate_accuracy(const TrainedModel& model, const EmbeddingBank& bank,
                         std::span<const std::size_t> indices, unsigned jobs) {
    if (indices.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const std::vector<std::uint32_t> preds = predict(model, bank, indices, jobs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        correct += preds[i] == bank.images[indices[i]].label ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

double zero_shot_accuracy(const EmbeddingBank& bank, std::span<const std::size_t> indices, double tau) {
    if (indices.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const Matrix text = bank.text_embeddings.cast<double>();
    std::size_t correct = 0;
    for (std::size_t i : indices) {
        const ImageRecord& rec = bank.images.at(i);
        correct += zero_shot_predict(text, rec.tokens().row(0).cast<double>(), tau).first == rec.label ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace apt
