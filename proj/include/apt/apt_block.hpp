#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "apt/types.hpp"

namespace apt {

/// Trainable tensors of one cross-attention block.
///
/// Queries come from the (layer-normalized) text rows, keys and values from
/// the image tokens. Head h owns columns [h*d/H, (h+1)*d/H) of the query,
/// key and value projections.
struct BlockWeights {
    RowVector ln1_gamma, ln1_beta;
    Matrix query, key, value;  // d x d
    Matrix output;             // d x d, zero at init
    RowVector output_bias;
    RowVector ln2_gamma, ln2_beta;
    Matrix ff_in;   // d x d_ff
    RowVector ff_in_bias;
    Matrix ff_out;  // d_ff x d, zero at init
    RowVector ff_out_bias;

    /// Visits every tensor in a fixed order (the checkpoint blob order).
    template <typename Self, typename F>
    static void visit(Self& self, F&& f) {
        f("ln1_gamma", self.ln1_gamma);
        f("ln1_beta", self.ln1_beta);
        f("query", self.query);
        f("key", self.key);
        f("value", self.value);
        f("output", self.output);
        f("output_bias", self.output_bias);
        f("ln2_gamma", self.ln2_gamma);
        f("ln2_beta", self.ln2_beta);
        f("ff_in", self.ff_in);
        f("ff_in_bias", self.ff_in_bias);
        f("ff_out", self.ff_out);
        f("ff_out_bias", self.ff_out_bias);
    }
    template <typename F>
    void for_each(F&& f) { visit(*this, f); }
    template <typename F>
    void for_each(F&& f) const { visit(*this, f); }

    /// All-zero tensors shaped for (dim, ff_dim).
    static BlockWeights zeros(Eigen::Index dim, Eigen::Index ff_dim);

    std::size_t num_values() const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> values);

    bool operator==(const BlockWeights& other) const;
};

using ParamGrads = BlockWeights;

struct APTParams {
    std::uint32_t dim = 0;
    std::uint32_t heads = 1;
    std::uint32_t ff_dim = 0;
    double dropout_rate = 0.0;
    BlockWeights weights;

    std::uint32_t head_dim() const { return dim / heads; }

    /// Throws DimMismatch if the tensors do not match (dim, heads, ff_dim).
    void validate() const;

    bool operator==(const APTParams&) const = default;
};

/// Query/key/value and ff_in ~ N(0, 1/fan_in); output and ff_out are zero so
/// the block is the identity map on W at initialization.
APTParams init_params(std::uint32_t dim, std::uint32_t heads, std::uint32_t ff_dim, std::uint64_t seed,
                      double dropout_rate = 0.0);

struct DropoutMode {
    enum class Kind { Off, Train, MonteCarlo };
    Kind kind = Kind::Off;
    std::uint64_t seed = 0;

    static DropoutMode off() { return {}; }
    static DropoutMode train(std::uint64_t seed) { return {Kind::Train, seed}; }
    static DropoutMode monte_carlo(std::uint64_t seed) { return {Kind::MonteCarlo, seed}; }

    bool active() const { return kind != Kind::Off; }
};

/// Intermediates of one forward call, consumed by backward().
struct ActivationCache {
    std::uint64_t param_fingerprint = 0;
    Matrix text;    // k x d input rows
    Matrix tokens;  // n x d keys/values source

    Matrix ln1_hat;   // normalized text rows
    Vector ln1_inv_std;
    Matrix ln1_out;
    Matrix q, k, v;
    std::vector<Matrix> attention;  // per head, k x n, rows sum to 1
    Matrix heads_out;               // k x d (concatenated heads)
    Matrix dropout1;                // mask already scaled by 1/(1-rate); empty when off
    Matrix residual;                // A = W + dropout(attention branch)

    Matrix ln2_hat;
    Vector ln2_inv_std;
    Matrix ln2_out;
    Matrix ff_pre;  // k x d_ff
    Matrix ff_act;
    Matrix dropout2;
};

struct ForwardResult {
    Matrix output;  // W'
    ActivationCache cache;
};

/// W' = A + Dropout(FF(LN2(A))),  A = W + Dropout(MHA(LN1(W); tokens)).
ForwardResult forward(const APTParams& params, const Matrix& text, const Matrix& tokens, DropoutMode mode);

/// Output only; same arithmetic as forward().
Matrix refine(const APTParams& params, const Matrix& text, const Matrix& tokens, DropoutMode mode);

/// Exact gradients of <d_output, W'> with respect to every parameter.
ParamGrads backward(const APTParams& params, const ActivationCache& cache, const Matrix& d_output);

/// Max over all parameters of |analytic - numeric| / (|numeric| + 1e-8) for
/// a fixed random loss direction, using the fourth-order central stencil
/// (8[f(x+e) - f(x-e)] - [f(x+2e) - f(x-2e)]) / 12e.
double finite_diff_check(const APTParams& params, const Matrix& text, const Matrix& tokens, double epsilon);

/// Stable hash of dims and parameter values.
std::uint64_t fingerprint(const APTParams& params);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace apt
