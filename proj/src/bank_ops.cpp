#include <algorithm>
#include <cmath>
#include <sstream>

#include "apt/embedding_bank.hpp"
#include "apt/errors.hpp"
#include "apt/random.hpp"

namespace apt {

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string class_name(std::size_t c) {
    std::string digits = std::to_string(c);
    return "class_" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

// Assigns 50% train_pool / 20% val / 30% test within one class.
void assign_splits(std::vector<ImageRecord*>& members, Rng& rng) {
    const std::size_t n = members.size();
    const auto n_train = static_cast<std::size_t>(std::lround(0.5 * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n))));
    rng.shuffle(std::span<ImageRecord*>(members));
    for (std::size_t i = 0; i < n; ++i) {
        members[i]->split = i < n_train ? SplitTag::TrainPool
                            : i < n_train + n_val ? SplitTag::Val
                                                  : SplitTag::Test;
    }
}

}  // namespace

EmbeddingBank generate_synthetic_bank(const SynthSpec& spec) {
    if (spec.num_classes == 0 || spec.dim == 0 || spec.tokens_per_image == 0 || spec.samples_per_class == 0) {
        throw InvalidSpec("counts must be positive");
    }
    if (!(spec.intra_class_sigma >= 0) || !(spec.inter_class_sigma >= 0) || !(spec.text_noise >= 0) ||
        !(spec.modality_gap >= 0) ||
        !(spec.patch_noise >= 0)) {
        throw InvalidSpec("noise scales must be non-negative");
    }
    const Eigen::Index k = spec.num_classes;
    const Eigen::Index d = spec.dim;

    Rng mean_rng(derive_seed(spec.seed, 0));
    Matrix means(k, d);
    for (Eigen::Index i = 0; i < means.size(); ++i) {
        means.data()[i] = spec.inter_class_sigma * mean_rng.normal();
    }

    EmbeddingBank bank;
    bank.dim = spec.dim;
    bank.tokens_per_image = spec.tokens_per_image;
    for (Eigen::Index c = 0; c < k; ++c) {
        bank.class_names.push_back(class_name(static_cast<std::size_t>(c)));
    }

    Rng text_rng(derive_seed(spec.seed, 1));
    const double text_sigma = spec.text_noise * spec.inter_class_sigma;
    RowVector gap(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        gap(j) = spec.modality_gap * spec.inter_class_sigma * text_rng.normal();
    }
    bank.text_embeddings.resize(k, d);
    for (Eigen::Index c = 0; c < k; ++c) {
        for (Eigen::Index j = 0; j < d; ++j) {
            bank.text_embeddings(c, j) = static_cast<float>(means(c, j) + gap(j) + text_sigma * text_rng.normal());
        }
    }

    Rng image_rng(derive_seed(spec.seed, 2));
    const double patch_sigma = spec.patch_noise * spec.intra_class_sigma;
    bank.images.reserve(static_cast<std::size_t>(k) * spec.samples_per_class);
    for (Eigen::Index c = 0; c < k; ++c) {
        for (std::uint32_t s = 0; s < spec.samples_per_class; ++s) {
            RowVector global(d);
            for (Eigen::Index j = 0; j < d; ++j) {
                global(j) = means(c, j) + spec.intra_class_sigma * image_rng.normal();
            }
            FloatMatrix tokens(spec.tokens_per_image, d);
            tokens.row(0) = global.cast<float>();
            for (Eigen::Index t = 1; t < tokens.rows(); ++t) {
                for (Eigen::Index j = 0; j < d; ++j) {
                    tokens(t, j) = static_cast<float>(global(j) + patch_sigma * image_rng.normal());
                }
            }
            ImageRecord rec;
            rec.views.push_back(std::move(tokens));
            rec.label = static_cast<std::uint32_t>(c);
            bank.images.push_back(std::move(rec));
        }
    }

    Rng split_rng(derive_seed(spec.seed, 3));
    for (Eigen::Index c = 0; c < k; ++c) {
        std::vector<ImageRecord*> members;
        for (std::uint32_t s = 0; s < spec.samples_per_class; ++s) {
            members.push_back(&bank.images[static_cast<std::size_t>(c) * spec.samples_per_class + s]);
        }
        assign_splits(members, split_rng);
    }

    bank.metadata = {
        {"dataset", "synthetic"},
        {"encoder", "none"},
        {"synth.seed", std::to_string(spec.seed)},
        {"synth.intra_class_sigma", format_double(spec.intra_class_sigma)},
        {"synth.inter_class_sigma", format_double(spec.inter_class_sigma)},
        {"synth.text_noise", format_double(spec.text_noise)},
        {"synth.patch_noise", format_double(spec.patch_noise)},
        {"synth.modality_gap", format_double(spec.modality_gap)},
    };
    return bank;
}

EmbeddingBank generate_ood_bank(const EmbeddingBank& reference, const OodSpec& spec) {
    reference.validate();
    if (spec.count == 0 || !(spec.sigma >= 0) || !(spec.min_distance_sigmas >= 0)) {
        throw InvalidSpec("OOD count must be positive and scales non-negative");
    }
    const Eigen::Index d = reference.dim;
    const Eigen::Index k = static_cast<Eigen::Index>(reference.num_classes());

    // Directions to avoid: text rows plus empirical class means of row 0.
    Matrix avoid(d, 2 * k);
    avoid.leftCols(k) = reference.text_embeddings.cast<double>().transpose();
    Matrix means = Matrix::Zero(k, d);
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (const ImageRecord& r : reference.images) {
        means.row(r.label) += r.tokens().row(0).cast<double>();
        counts[r.label] += 1.0;
    }
    for (Eigen::Index c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) {
            means.row(c) /= counts[static_cast<std::size_t>(c)];
        } else {
            means.row(c) = reference.text_embeddings.row(c).cast<double>();
        }
    }
    avoid.rightCols(k) = means.transpose();

    Eigen::ColPivHouseholderQR<Matrix> qr(avoid);
    Eigen::Index rank = qr.rank();
    if (rank >= d) {
        // Fall back to the text rows alone.
        qr.compute(avoid.leftCols(k));
        rank = qr.rank();
        if (rank >= d) {
            throw InvalidSpec("dim must exceed the number of classes to place OOD data");
        }
    }
    const Matrix q = qr.householderQ() * Matrix::Identity(d, d);
    const Matrix complement = q.rightCols(d - rank);  // d x (d - rank), orthonormal columns

    const double radius = spec.min_distance_sigmas * spec.sigma * std::sqrt(static_cast<double>(d));
    constexpr std::uint32_t kClusters = 4;
    Rng rng(derive_seed(spec.seed, 17));
    std::vector<Vector> centers;
    for (std::uint32_t c = 0; c < kClusters; ++c) {
        Vector g(complement.cols());
        for (Eigen::Index j = 0; j < g.size(); ++j) {
            g(j) = rng.normal();
        }
        Vector center = complement * g;
        center *= radius / center.norm();
        centers.push_back(std::move(center));
    }

    EmbeddingBank bank;
    bank.dim = reference.dim;
    bank.tokens_per_image = reference.tokens_per_image;
    bank.class_names = reference.class_names;
    bank.text_embeddings = reference.text_embeddings;
    bank.metadata = {{"dataset", "synthetic-ood"}, {"ood", "true"}, {"synth.seed", std::to_string(spec.seed)}};
    for (std::uint32_t i = 0; i < spec.count; ++i) {
        const Vector& center = centers[i % kClusters];
        RowVector global(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            global(j) = center(j) + spec.sigma * rng.normal();
        }
        FloatMatrix tokens(reference.tokens_per_image, d);
        tokens.row(0) = global.cast<float>();
        for (Eigen::Index t = 1; t < tokens.rows(); ++t) {
            for (Eigen::Index j = 0; j < d; ++j) {
                tokens(t, j) = static_cast<float>(global(j) + 0.5 * spec.sigma * rng.normal());
            }
        }
        ImageRecord rec;
        rec.views.push_back(std::move(tokens));
        rec.label = 0;
        rec.split = SplitTag::Test;
        bank.images.push_back(std::move(rec));
    }
    return bank;
}

Episode sample_episode(const EmbeddingBank& bank, std::uint32_t shots, std::uint64_t seed) {
    if (shots == 0) {
        throw InvalidSpec("shots must be positive");
    }
    Episode ep;
    ep.shots = shots;
    ep.seed = seed;
    const std::size_t k = bank.num_classes();
    std::vector<std::vector<std::size_t>> pools(k);
    for (std::size_t i = 0; i < bank.images.size(); ++i) {
        const ImageRecord& r = bank.images[i];
        switch (r.split) {
            case SplitTag::TrainPool: pools.at(r.label).push_back(i); break;
            case SplitTag::Val: ep.val_indices.push_back(i); break;
            case SplitTag::Test: ep.test_indices.push_back(i); break;
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<std::size_t>& pool = pools[c];
        if (pool.size() < shots) {
            throw InsufficientSamples("class " + std::to_string(c) + " ('" + bank.class_names[c] + "') has " +
                                      std::to_string(pool.size()) + " train_pool records, need " +
                                      std::to_string(shots));
        }
        Rng rng(derive_seed(seed, c));
        rng.shuffle(std::span<std::size_t>(pool));
        pool.resize(shots);
        std::sort(pool.begin(), pool.end());
        ep.train_indices.insert(ep.train_indices.end(), pool.begin(), pool.end());
        ep.class_subset.push_back(static_cast<std::uint32_t>(c));
    }
    return ep;
}

std::pair<EmbeddingBank, EmbeddingBank> split_base_new(const EmbeddingBank& bank) {
    const std::size_t k = bank.num_classes();
    if (k < 2) {
        throw TooFewClasses("base/new split needs at least 2 classes, got " + std::to_string(k));
    }
    const std::size_t base_k = (k + 1) / 2;
    auto half = [&](std::size_t first, std::size_t count) {
        EmbeddingBank out;
        out.dim = bank.dim;
        out.tokens_per_image = bank.tokens_per_image;
        out.metadata = bank.metadata;
        out.class_names.assign(bank.class_names.begin() + static_cast<std::ptrdiff_t>(first),
                               bank.class_names.begin() + static_cast<std::ptrdiff_t>(first + count));
        out.text_embeddings = bank.text_embeddings.middleRows(static_cast<Eigen::Index>(first),
                                                              static_cast<Eigen::Index>(count));
        for (const ImageRecord& r : bank.images) {
            if (r.label >= first && r.label < first + count) {
                ImageRecord copy = r;
                copy.label = static_cast<std::uint32_t>(r.label - first);
                out.images.push_back(std::move(copy));
            }
        }
        return out;
    };
    return {half(0, base_k), half(base_k, k - base_k)};
}

}  // namespace apt
