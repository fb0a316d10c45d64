#include "apt/classifier.hpp"

#include <cmath>

#include "apt/errors.hpp"

namespace apt {

namespace {

void require_nonzero(double norm, const char* what) {
    if (!(norm > 0.0)) {
        throw ZeroNormVector(std::string(what) + " has zero norm");
    }
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeMismatch("cosine of vectors with different lengths");
    }
    const Eigen::Map<const RowVector> va(a.data(), static_cast<Eigen::Index>(a.size()));
    const Eigen::Map<const RowVector> vb(b.data(), static_cast<Eigen::Index>(b.size()));
    return cosine_similarity(RowVector(va), RowVector(vb));
}

double cosine_similarity(const RowVector& a, const RowVector& b) {
    if (a.size() != b.size()) {
        throw ShapeMismatch("cosine of vectors with different lengths");
    }
    const double na = a.norm();
    const double nb = b.norm();
    require_nonzero(na, "first vector");
    require_nonzero(nb, "second vector");
    // Rounding can push |cos| a hair past 1.
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Vector cosine_logits(const Matrix& rows, const RowVector& z) {
    if (rows.cols() != z.size()) {
        throw ShapeMismatch("rows and z differ in dimension");
    }
    const double nz = z.norm();
    require_nonzero(nz, "image feature");
    Vector out(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const double nw = rows.row(i).norm();
        if (!(nw > 0.0)) {
            throw ZeroNormVector("class row " + std::to_string(i) + " has zero norm");
        }
        out(i) = std::clamp(rows.row(i).dot(z) / (nw * nz), -1.0, 1.0);
    }
    return out;
}

ProbVector softmax_with_temperature(const Vector& cosines, double tau) {
    if (!(tau > 0.0)) {
        throw NonPositiveTemperature("tau must be positive, got " + std::to_string(tau));
    }
    ProbVector p;
    p.tau = tau;
    const double m = cosines.maxCoeff();
    p.probs = ((cosines.array() - m) / tau).exp();
    p.probs /= p.probs.sum();
    return p;
}

ProbVector class_probabilities(const Matrix& rows, const RowVector& z, double tau) {
    if (!(tau > 0.0)) {
        throw NonPositiveTemperature("tau must be positive, got " + std::to_string(tau));
    }
    return softmax_with_temperature(cosine_logits(rows, z), tau);
}

std::uint32_t argmax(const Vector& values) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < values.size(); ++i) {
        if (values(i) > values(best)) {
            best = i;
        }
    }
    return static_cast<std::uint32_t>(best);
}

std::pair<std::uint32_t, ProbVector> zero_shot_predict(const Matrix& text, const RowVector& z, double tau) {
    ProbVector p = class_probabilities(text, z, tau);
    // Argmax on the logits: equal cosines can round to distinct probabilities.
    const std::uint32_t label = argmax(cosine_logits(text, z));
    return {label, std::move(p)};
}

LossGrad loss_and_grad(const ProbVector& probs, std::uint32_t label) {
    if (label >= probs.size()) {
        throw LabelOutOfRange("label " + std::to_string(label) + " with " + std::to_string(probs.size()) +
                              " classes");
    }
    LossGrad r;
    r.loss = -std::log(probs.probs(label));
    r.d_cos = probs.probs / probs.tau;
    r.d_cos(label) -= 1.0 / probs.tau;
    return r;
}

Matrix cosine_rows_backward(const Matrix& rows, const RowVector& z, const Vector& d_cos) {
    const RowVector z_hat = z / z.norm();
    Matrix grad(rows.rows(), rows.cols());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const double nw = rows.row(i).norm();
        const RowVector w_hat = rows.row(i) / nw;
        const double c = w_hat.dot(z_hat);
        grad.row(i) = d_cos(i) * (z_hat - c * w_hat) / nw;
    }
    return grad;
}

}  // namespace apt
