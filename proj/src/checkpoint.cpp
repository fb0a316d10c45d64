#include "apt/errors.hpp"
#include "apt/trainer.hpp"
#include "binary_io.hpp"

namespace apt {

namespace {

constexpr std::string_view kCheckpointMagic = "APTC";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::size_t kHistoryEntryBytes = 4 + 8 + 8;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainedModel& model) {
    model.params.validate();
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.uint<std::uint32_t>(kCheckpointVersion);
    w.uint<std::uint32_t>(model.params.dim);
    w.uint<std::uint32_t>(model.params.heads);
    w.uint<std::uint32_t>(model.params.ff_dim);
    w.f32(static_cast<float>(model.params.dropout_rate));
    for (double v : model.params.weights.flatten()) {
        w.f64(v);
    }
    for (const HistoryEntry& h : model.history) {
        w.uint<std::uint32_t>(h.epoch);
        w.f64(h.loss);
        w.f64(h.val_acc);
    }
    return std::move(w.buffer());
}

TrainedModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader<MalformedCheckpoint> r(bytes);
    if (bytes.size() < 4 || r.bytes(4, "magic") != kCheckpointMagic) {
        throw MalformedCheckpoint("bad magic at offset 0 (expected \"APTC\")");
    }
    const auto version = r.uint<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw MalformedCheckpoint("unsupported version " + std::to_string(version));
    }
    TrainedModel model;
    APTParams& p = model.params;
    p.dim = r.uint<std::uint32_t>("dim");
    p.heads = r.uint<std::uint32_t>("heads");
    p.ff_dim = r.uint<std::uint32_t>("ff_dim");
    p.dropout_rate = r.f32("dropout");
    if (p.dim == 0 || p.heads == 0 || p.ff_dim == 0 || p.dim % p.heads != 0 ||
        !(p.dropout_rate >= 0.0 && p.dropout_rate < 1.0)) {
        throw MalformedCheckpoint("inconsistent header (dim " + std::to_string(p.dim) + ", heads " +
                                  std::to_string(p.heads) + ", ff_dim " + std::to_string(p.ff_dim) + ")");
    }
    p.weights = BlockWeights::zeros(p.dim, p.ff_dim);
    const std::size_t count = p.weights.num_values();
    if (r.remaining() / 8 < count) {
        throw MalformedCheckpoint("parameter blob truncated at offset " + std::to_string(r.offset()));
    }
    std::vector<double> blob(count);
    for (double& v : blob) {
        v = r.f64("parameter");
    }
    p.weights.assign(blob);
    if (r.remaining() % kHistoryEntryBytes != 0) {
        throw MalformedCheckpoint("history section of " + std::to_string(r.remaining()) +
                                  " bytes is not a whole number of entries");
    }
    while (r.remaining() > 0) {
        HistoryEntry h;
        h.epoch = r.uint<std::uint32_t>("epoch");
        h.loss = r.f64("loss");
        h.val_acc = r.f64("val_acc");
        model.history.push_back(h);
    }
    return model;
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
    detail::write_file_atomic(path, encode_checkpoint(model));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file(path));
}

}  // namespace apt
