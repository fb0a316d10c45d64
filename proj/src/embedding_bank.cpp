#include "apt/embedding_bank.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "apt/errors.hpp"
#include "binary_io.hpp"

namespace apt {

namespace {

constexpr std::string_view kBankMagic = "APTB";
constexpr std::uint32_t kBankVersion = 1;
constexpr std::uint64_t kHeaderBytes = 4 + 4 + 4 + 4 + 4 + 8;
constexpr std::uint64_t kRecordHeaderBytes = 4 + 1 + 1;

std::filesystem::path manifest_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".manifest.json";
    return p;
}

bool all_finite(const FloatMatrix& m) { return m.allFinite(); }

}  // namespace

void EmbeddingBank::validate() const {
    if (dim == 0) {
        throw InvariantViolation("dim must be positive");
    }
    if (tokens_per_image == 0) {
        throw InvariantViolation("tokens_per_image must be at least 1");
    }
    std::set<std::string> seen;
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        if (class_names[c].empty()) {
            throw InvariantViolation("class " + std::to_string(c) + " has an empty name");
        }
        if (class_names[c].size() > 0xFFFF) {
            throw InvariantViolation("class " + std::to_string(c) + " name exceeds 65535 bytes");
        }
        if (!seen.insert(class_names[c]).second) {
            throw InvariantViolation("duplicate class name '" + class_names[c] + "'");
        }
    }
    if (static_cast<std::size_t>(text_embeddings.rows()) != class_names.size() ||
        text_embeddings.cols() != static_cast<Eigen::Index>(dim)) {
        throw InvariantViolation("text_embeddings must be num_classes x dim");
    }
    if (!all_finite(text_embeddings)) {
        throw InvariantViolation("text_embeddings contain a non-finite value");
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
        const ImageRecord& r = images[i];
        const std::string where = "image " + std::to_string(i);
        if (r.label >= class_names.size()) {
            throw InvariantViolation(where + ": label " + std::to_string(r.label) +
                                     " out of range [0, " + std::to_string(class_names.size()) + ")");
        }
        if (static_cast<std::uint8_t>(r.split) > 2) {
            throw InvariantViolation(where + ": unknown split tag");
        }
        if (r.views.empty() || r.views.size() > 255) {
            throw InvariantViolation(where + ": view count must be in [1, 255]");
        }
        for (const FloatMatrix& v : r.views) {
            if (v.rows() != static_cast<Eigen::Index>(tokens_per_image) ||
                v.cols() != static_cast<Eigen::Index>(dim)) {
                throw InvariantViolation(where + ": token matrix must be tokens_per_image x dim");
            }
            if (!all_finite(v)) {
                throw InvariantViolation(where + ": non-finite token value");
            }
        }
    }
}

std::uint64_t encoded_bank_size(const EmbeddingBank& bank) {
    std::uint64_t size = kHeaderBytes;
    for (const std::string& name : bank.class_names) {
        size += 2 + name.size();
    }
    size += 4ULL * bank.num_classes() * bank.dim;
    for (const ImageRecord& r : bank.images) {
        size += kRecordHeaderBytes + 4ULL * r.views.size() * bank.tokens_per_image * bank.dim;
    }
    return size;
}

std::vector<std::uint8_t> encode_bank(const EmbeddingBank& bank) {
    bank.validate();
    detail::ByteWriter w;
    w.buffer().reserve(encoded_bank_size(bank));
    w.bytes(kBankMagic);
    w.uint<std::uint32_t>(kBankVersion);
    w.uint<std::uint32_t>(bank.dim);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(bank.num_classes()));
    w.uint<std::uint32_t>(bank.tokens_per_image);
    w.uint<std::uint64_t>(bank.images.size());
    for (const std::string& name : bank.class_names) {
        w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
    }
    for (Eigen::Index i = 0; i < bank.text_embeddings.size(); ++i) {
        w.f32(bank.text_embeddings.data()[i]);
    }
    for (const ImageRecord& r : bank.images) {
        w.uint<std::uint32_t>(r.label);
        w.uint<std::uint8_t>(static_cast<std::uint8_t>(r.split));
        w.uint<std::uint8_t>(static_cast<std::uint8_t>(r.views.size()));
        for (const FloatMatrix& v : r.views) {
            for (Eigen::Index i = 0; i < v.size(); ++i) {
                w.f32(v.data()[i]);
            }
        }
    }
    return std::move(w.buffer());
}

EmbeddingBank decode_bank(std::span<const std::uint8_t> bytes) {
    detail::ByteReader<TruncatedFile> r(bytes);
    if (r.bytes(4, "magic") != kBankMagic) {
        throw MalformedHeader("bad magic at offset 0 (expected \"APTB\")");
    }
    const auto version = r.uint<std::uint32_t>("version");
    if (version != kBankVersion) {
        throw MalformedHeader("unsupported version " + std::to_string(version) + " at offset 4");
    }
    EmbeddingBank bank;
    bank.dim = r.uint<std::uint32_t>("dim");
    const auto num_classes = r.uint<std::uint32_t>("num_classes");
    bank.tokens_per_image = r.uint<std::uint32_t>("tokens_per_image");
    const auto num_images = r.uint<std::uint64_t>("num_images");
    if (bank.dim == 0) {
        throw MalformedHeader("dim is zero at offset 8");
    }
    if (bank.tokens_per_image == 0) {
        throw MalformedHeader("tokens_per_image is zero at offset 16");
    }

    bank.class_names.reserve(std::min<std::size_t>(num_classes, r.remaining() / 2));
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        const auto len = r.uint<std::uint16_t>("class name length");
        bank.class_names.push_back(r.bytes(len, "class name " + std::to_string(c)));
    }

    const std::uint64_t text_values = std::uint64_t{num_classes} * bank.dim;
    if (r.remaining() / 4 < text_values) {
        throw TruncatedFile("text embeddings need " + std::to_string(text_values * 4) +
                            " bytes at offset " + std::to_string(r.offset()));
    }
    bank.text_embeddings.resize(num_classes, bank.dim);
    for (std::uint64_t i = 0; i < text_values; ++i) {
        const std::size_t at = r.offset();
        float v = r.f32("text embedding");
        if (!std::isfinite(v)) {
            throw InvariantViolation("non-finite text embedding value at offset " + std::to_string(at));
        }
        bank.text_embeddings.data()[i] = v;
    }

    const std::uint64_t values_per_view = std::uint64_t{bank.tokens_per_image} * bank.dim;
    if (r.remaining() / kRecordHeaderBytes < num_images) {
        throw TruncatedFile("header declares " + std::to_string(num_images) +
                            " images but only " + std::to_string(r.remaining()) + " bytes remain");
    }
    bank.images.reserve(num_images);
    for (std::uint64_t i = 0; i < num_images; ++i) {
        const std::string where = "image " + std::to_string(i) + " at offset " + std::to_string(r.offset());
        ImageRecord rec;
        rec.label = r.uint<std::uint32_t>("label");
        if (rec.label >= num_classes) {
            throw InvariantViolation(where + ": label " + std::to_string(rec.label) + " out of range");
        }
        const auto split = r.uint<std::uint8_t>("split tag");
        if (split > 2) {
            throw InvariantViolation(where + ": unknown split tag " + std::to_string(split));
        }
        rec.split = static_cast<SplitTag>(split);
        const auto views = r.uint<std::uint8_t>("view count");
        if (views == 0) {
            throw InvariantViolation(where + ": zero views");
        }
        if (r.remaining() / 4 / views < values_per_view) {
            throw TruncatedFile(where + ": token data truncated");
        }
        rec.views.resize(views);
        for (FloatMatrix& v : rec.views) {
            v.resize(bank.tokens_per_image, bank.dim);
            for (std::uint64_t j = 0; j < values_per_view; ++j) {
                const std::size_t at = r.offset();
                float x = r.f32("token value");
                if (!std::isfinite(x)) {
                    throw InvariantViolation("image " + std::to_string(i) +
                                             ": non-finite token value at offset " + std::to_string(at));
                }
                v.data()[j] = x;
            }
        }
        bank.images.push_back(std::move(rec));
    }
    if (r.remaining() != 0) {
        throw InvariantViolation(std::to_string(r.remaining()) + " trailing bytes at offset " +
                                 std::to_string(r.offset()));
    }
    bank.validate();
    return bank;
}

EmbeddingBank load_bank(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = detail::read_file(path);
    EmbeddingBank bank = decode_bank(bytes);
    const auto sidecar = manifest_path(path);
    if (std::filesystem::exists(sidecar)) {
        const std::vector<std::uint8_t> text = detail::read_file(sidecar);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text.begin(), text.end());
        } catch (const nlohmann::json::parse_error& e) {
            throw InvariantViolation("manifest " + sidecar.string() + ": " + e.what());
        }
        if (!j.is_object()) {
            throw InvariantViolation("manifest " + sidecar.string() + " is not a JSON object");
        }
        for (const auto& [key, value] : j.items()) {
            bank.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
        }
    }
    return bank;
}

void save_bank(const EmbeddingBank& bank, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = encode_bank(bank);
    detail::write_file_atomic(path, bytes);
    const auto sidecar = manifest_path(path);
    if (!bank.metadata.empty()) {
        nlohmann::json j(bank.metadata);
        detail::write_file_atomic(sidecar, j.dump(2) + "\n");
    } else if (std::filesystem::exists(sidecar)) {
        std::filesystem::remove(sidecar);
    }
}

Matrix global_features(const EmbeddingBank& bank, std::span<const std::size_t> indices) {
    Matrix out(static_cast<Eigen::Index>(indices.size()), bank.dim);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = bank.images.at(indices[i]).tokens().row(0).cast<double>();
    }
    return out;
}

std::vector<std::uint32_t> labels_of(const EmbeddingBank& bank, std::span<const std::size_t> indices) {
    std::vector<std::uint32_t> labels;
    labels.reserve(indices.size());
    for (std::size_t i : indices) {
        labels.push_back(bank.images.at(i).label);
    }
    return labels;
}

std::vector<std::size_t> indices_with_split(const EmbeddingBank& bank, SplitTag tag) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bank.images.size(); ++i) {
        if (bank.images[i].split == tag) {
            out.push_back(i);
        }
    }
    return out;
}

}  // namespace apt
