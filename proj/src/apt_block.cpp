#include "apt/apt_block.hpp"

#include <bit>
#include <cmath>
#include <numbers>

#include "apt/errors.hpp"
#include "apt/random.hpp"

namespace apt {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr std::uint64_t kFiniteDiffDirectionSeed = 0x5EED'F1D1'0000'0001ULL;

struct LayerNormOut {
    Matrix hat;
    Vector inv_std;
    Matrix out;
};

LayerNormOut layer_norm(const Matrix& x, const RowVector& gamma, const RowVector& beta) {
    LayerNormOut r;
    r.hat.resize(x.rows(), x.cols());
    r.inv_std.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const RowVector centered = x.row(i).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(x.cols());
        r.inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
        r.hat.row(i) = centered * r.inv_std(i);
    }
    r.out = (r.hat.array().rowwise() * gamma.array()).rowwise() + beta.array();
    return r;
}

// Accumulates gamma/beta gradients and returns the input gradient.
Matrix layer_norm_backward(const Matrix& d_out, const Matrix& hat, const Vector& inv_std, const RowVector& gamma,
                           RowVector& d_gamma, RowVector& d_beta) {
    d_gamma += (d_out.array() * hat.array()).colwise().sum().matrix();
    d_beta += d_out.colwise().sum();
    const Matrix d_hat = d_out.array().rowwise() * gamma.array();
    Matrix d_x(d_out.rows(), d_out.cols());
    const double inv_d = 1.0 / static_cast<double>(d_out.cols());
    for (Eigen::Index i = 0; i < d_out.rows(); ++i) {
        const double mean_dh = d_hat.row(i).sum() * inv_d;
        const double mean_dh_h = d_hat.row(i).dot(hat.row(i)) * inv_d;
        d_x.row(i) = inv_std(i) * (d_hat.row(i).array() - mean_dh - hat.row(i).array() * mean_dh_h).matrix();
    }
    return d_x;
}

Matrix dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double rate) {
    Matrix mask(rows, cols);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    }
    return mask;
}

void check_inputs(const APTParams& params, const Matrix& text, const Matrix& tokens) {
    params.validate();
    const auto d = static_cast<Eigen::Index>(params.dim);
    if (text.cols() != d || tokens.cols() != d) {
        throw ShapeMismatch("text and tokens must have " + std::to_string(d) + " columns (got " +
                            std::to_string(text.cols()) + " and " + std::to_string(tokens.cols()) + ")");
    }
    if (text.rows() < 1 || tokens.rows() < 1) {
        throw ShapeMismatch("need at least one text row and one token");
    }
    if (!text.allFinite() || !tokens.allFinite()) {
        throw NonFiniteInput("text or token matrix contains a non-finite value");
    }
}

void fnv_mix(std::uint64_t& h, std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
        h ^= (word >> (8 * i)) & 0xFF;
        h *= 0x100000001B3ULL;
    }
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

BlockWeights BlockWeights::zeros(Eigen::Index dim, Eigen::Index ff_dim) {
    BlockWeights w;
    w.ln1_gamma = RowVector::Zero(dim);
    w.ln1_beta = RowVector::Zero(dim);
    w.query = Matrix::Zero(dim, dim);
    w.key = Matrix::Zero(dim, dim);
    w.value = Matrix::Zero(dim, dim);
    w.output = Matrix::Zero(dim, dim);
    w.output_bias = RowVector::Zero(dim);
    w.ln2_gamma = RowVector::Zero(dim);
    w.ln2_beta = RowVector::Zero(dim);
    w.ff_in = Matrix::Zero(dim, ff_dim);
    w.ff_in_bias = RowVector::Zero(ff_dim);
    w.ff_out = Matrix::Zero(ff_dim, dim);
    w.ff_out_bias = RowVector::Zero(dim);
    return w;
}

std::size_t BlockWeights::num_values() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
}

std::vector<double> BlockWeights::flatten() const {
    std::vector<double> out;
    out.reserve(num_values());
    for_each([&](std::string_view, const auto& t) { out.insert(out.end(), t.data(), t.data() + t.size()); });
    return out;
}

void BlockWeights::assign(std::span<const double> values) {
    if (values.size() != num_values()) {
        throw DimMismatch("parameter blob has " + std::to_string(values.size()) + " values, expected " +
                          std::to_string(num_values()));
    }
    std::size_t at = 0;
    for_each([&](std::string_view, auto& t) {
        std::copy_n(values.data() + at, t.size(), t.data());
        at += static_cast<std::size_t>(t.size());
    });
}

bool BlockWeights::operator==(const BlockWeights& other) const {
    bool same = true;
    std::vector<const double*> mine;
    std::vector<Eigen::Index> rows, cols;
    for_each([&](std::string_view, const auto& t) {
        mine.push_back(t.data());
        rows.push_back(t.rows());
        cols.push_back(t.cols());
    });
    std::size_t i = 0;
    other.for_each([&](std::string_view, const auto& t) {
        if (!same) return;
        if (t.rows() != rows[i] || t.cols() != cols[i] ||
            !std::equal(t.data(), t.data() + t.size(), mine[i])) {
            same = false;
        }
        ++i;
    });
    return same;
}

void APTParams::validate() const {
    if (dim == 0 || heads == 0 || ff_dim == 0) {
        throw DimMismatch("dim, heads and ff_dim must be positive");
    }
    if (dim % heads != 0) {
        throw DimMismatch("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw DimMismatch("dropout_rate must lie in [0, 1)");
    }
    const BlockWeights expected = BlockWeights::zeros(dim, ff_dim);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    expected.for_each([&](std::string_view, const auto& t) { shapes.emplace_back(t.rows(), t.cols()); });
    std::size_t i = 0;
    weights.for_each([&](std::string_view name, const auto& t) {
        if (t.rows() != shapes[i].first || t.cols() != shapes[i].second) {
            throw DimMismatch("tensor '" + std::string(name) + "' has shape " + std::to_string(t.rows()) + "x" +
                              std::to_string(t.cols()));
        }
        ++i;
    });
}

APTParams init_params(std::uint32_t dim, std::uint32_t heads, std::uint32_t ff_dim, std::uint64_t seed,
                      double dropout_rate) {
    APTParams p;
    p.dim = dim;
    p.heads = heads;
    p.ff_dim = ff_dim;
    p.dropout_rate = dropout_rate;
    if (dim == 0 || heads == 0 || ff_dim == 0 || dim % heads != 0) {
        throw DimMismatch("cannot build a block with dim " + std::to_string(dim) + ", heads " +
                          std::to_string(heads) + ", ff_dim " + std::to_string(ff_dim));
    }
    p.weights = BlockWeights::zeros(dim, ff_dim);
    BlockWeights& w = p.weights;
    Rng rng(seed);
    auto fill = [&](Matrix& m, double fan_in) {
        const double scale = 1.0 / std::sqrt(fan_in);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = scale * rng.normal();
        }
    };
    fill(w.query, dim);
    fill(w.key, dim);
    fill(w.value, dim);
    fill(w.ff_in, dim);
    w.ln1_gamma.setOnes();
    w.ln2_gamma.setOnes();
    p.validate();
    return p;
}

std::uint64_t fingerprint(const APTParams& params) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    fnv_mix(h, params.dim);
    fnv_mix(h, params.heads);
    fnv_mix(h, params.ff_dim);
    fnv_mix(h, std::bit_cast<std::uint64_t>(params.dropout_rate));
    params.weights.for_each([&](std::string_view, const auto& t) {
        fnv_mix(h, static_cast<std::uint64_t>(t.size()));
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            fnv_mix(h, std::bit_cast<std::uint64_t>(t.data()[i]));
        }
    });
    return h;
}

ForwardResult forward(const APTParams& params, const Matrix& text, const Matrix& tokens, DropoutMode mode) {
    check_inputs(params, text, tokens);
    const BlockWeights& w = params.weights;
    const Eigen::Index k = text.rows();
    const Eigen::Index n = tokens.rows();
    const Eigen::Index hd = params.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool dropping = mode.active() && params.dropout_rate > 0.0;

    ForwardResult r;
    ActivationCache& c = r.cache;
    c.param_fingerprint = fingerprint(params);
    c.text = text;
    c.tokens = tokens;

    LayerNormOut ln1 = layer_norm(text, w.ln1_gamma, w.ln1_beta);
    c.ln1_hat = std::move(ln1.hat);
    c.ln1_inv_std = std::move(ln1.inv_std);
    c.ln1_out = std::move(ln1.out);

    c.q = c.ln1_out * w.query;
    c.k = tokens * w.key;
    c.v = tokens * w.value;
    c.heads_out.resize(k, params.dim);
    c.attention.resize(params.heads);
    for (std::uint32_t h = 0; h < params.heads; ++h) {
        const Eigen::Index off = h * hd;
        Matrix scores = (c.q.middleCols(off, hd) * c.k.middleCols(off, hd).transpose()) * scale;  // k x n
        for (Eigen::Index i = 0; i < k; ++i) {
            const double m = scores.row(i).maxCoeff();
            scores.row(i) = (scores.row(i).array() - m).exp();
            scores.row(i) /= scores.row(i).sum();
        }
        c.heads_out.middleCols(off, hd) = scores * c.v.middleCols(off, hd);
        c.attention[h] = std::move(scores);
    }
    (void)n;

    Matrix attn_branch = (c.heads_out * w.output).rowwise() + w.output_bias;
    Rng rng(mode.seed);
    if (dropping) {
        c.dropout1 = dropout_mask(rng, k, params.dim, params.dropout_rate);
        attn_branch.array() *= c.dropout1.array();
    }
    c.residual = text + attn_branch;

    LayerNormOut ln2 = layer_norm(c.residual, w.ln2_gamma, w.ln2_beta);
    c.ln2_hat = std::move(ln2.hat);
    c.ln2_inv_std = std::move(ln2.inv_std);
    c.ln2_out = std::move(ln2.out);

    c.ff_pre = (c.ln2_out * w.ff_in).rowwise() + w.ff_in_bias;
    c.ff_act = c.ff_pre.unaryExpr([](double x) { return gelu(x); });
    Matrix ff_branch = (c.ff_act * w.ff_out).rowwise() + w.ff_out_bias;
    if (dropping) {
        c.dropout2 = dropout_mask(rng, k, params.dim, params.dropout_rate);
        ff_branch.array() *= c.dropout2.array();
    }
    r.output = c.residual + ff_branch;
    return r;
}

Matrix refine(const APTParams& params, const Matrix& text, const Matrix& tokens, DropoutMode mode) {
    return forward(params, text, tokens, mode).output;
}

ParamGrads backward(const APTParams& params, const ActivationCache& cache, const Matrix& d_output) {
    if (cache.param_fingerprint != fingerprint(params)) {
        throw StaleCache("activation cache was produced with different parameters");
    }
    if (d_output.rows() != cache.residual.rows() || d_output.cols() != cache.residual.cols()) {
        throw ShapeMismatch("output gradient must be " + std::to_string(cache.residual.rows()) + "x" +
                            std::to_string(cache.residual.cols()));
    }
    const BlockWeights& w = params.weights;
    const Eigen::Index hd = params.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    ParamGrads g = BlockWeights::zeros(params.dim, params.ff_dim);

    // Feed-forward branch.
    Matrix d_ff = d_output;
    if (cache.dropout2.size() != 0) {
        d_ff.array() *= cache.dropout2.array();
    }
    g.ff_out = cache.ff_act.transpose() * d_ff;
    g.ff_out_bias = d_ff.colwise().sum();
    Matrix d_pre = d_ff * w.ff_out.transpose();
    d_pre.array() *= cache.ff_pre.unaryExpr([](double x) { return gelu_derivative(x); }).array();
    g.ff_in = cache.ln2_out.transpose() * d_pre;
    g.ff_in_bias = d_pre.colwise().sum();
    const Matrix d_ln2 = d_pre * w.ff_in.transpose();
    Matrix d_residual = d_output + layer_norm_backward(d_ln2, cache.ln2_hat, cache.ln2_inv_std, w.ln2_gamma,
                                                       g.ln2_gamma, g.ln2_beta);

    // Attention branch; the text rows themselves are frozen.
    Matrix d_attn = std::move(d_residual);
    if (cache.dropout1.size() != 0) {
        d_attn.array() *= cache.dropout1.array();
    }
    g.output = cache.heads_out.transpose() * d_attn;
    g.output_bias = d_attn.colwise().sum();
    const Matrix d_heads = d_attn * w.output.transpose();

    Matrix d_q(cache.q.rows(), cache.q.cols());
    Matrix d_k(cache.k.rows(), cache.k.cols());
    Matrix d_v(cache.v.rows(), cache.v.cols());
    for (std::uint32_t h = 0; h < params.heads; ++h) {
        const Eigen::Index off = h * hd;
        const Matrix& p = cache.attention[h];
        const auto d_o = d_heads.middleCols(off, hd);
        const Matrix d_p = d_o * cache.v.middleCols(off, hd).transpose();
        d_v.middleCols(off, hd) = p.transpose() * d_o;
        const Vector row_dot = (d_p.array() * p.array()).rowwise().sum();
        const Matrix d_s = (p.array() * (d_p.array().colwise() - row_dot.array())).matrix() * scale;
        d_q.middleCols(off, hd) = d_s * cache.k.middleCols(off, hd);
        d_k.middleCols(off, hd) = d_s.transpose() * cache.q.middleCols(off, hd);
    }
    g.query = cache.ln1_out.transpose() * d_q;
    g.key = cache.tokens.transpose() * d_k;
    g.value = cache.tokens.transpose() * d_v;
    const Matrix d_ln1 = d_q * w.query.transpose();
    layer_norm_backward(d_ln1, cache.ln1_hat, cache.ln1_inv_std, w.ln1_gamma, g.ln1_gamma, g.ln1_beta);
    return g;
}

double finite_diff_check(const APTParams& params, const Matrix& text, const Matrix& tokens, double epsilon) {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw InvalidEpsilon("epsilon must be a positive finite number");
    }
    check_inputs(params, text, tokens);
    Rng rng(kFiniteDiffDirectionSeed);
    Matrix direction(text.rows(), text.cols());
    for (Eigen::Index i = 0; i < direction.size(); ++i) {
        direction.data()[i] = rng.normal();
    }

    const ForwardResult base = forward(params, text, tokens, DropoutMode::off());
    const std::vector<double> analytic = backward(params, base.cache, direction).flatten();

    APTParams probe = params;
    std::vector<double> values = params.weights.flatten();
    auto loss_at = [&](std::size_t i, double value) {
        const double saved = values[i];
        values[i] = value;
        probe.weights.assign(values);
        values[i] = saved;
        return (direction.array() * refine(probe, text, tokens, DropoutMode::off()).array()).sum();
    };

    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = values[i];
        const double near = loss_at(i, x + epsilon) - loss_at(i, x - epsilon);
        const double far = loss_at(i, x + 2.0 * epsilon) - loss_at(i, x - 2.0 * epsilon);
        const double numeric = (8.0 * near - far) / (12.0 * epsilon);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8));
    }
    return worst;
}

}  // namespace apt
