#include "decoupler/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "decoupler/errors.hpp"

namespace decoupler {

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

DenseVector matvec(const DenseMatrix& m, const DenseVector& v) {
    if (m.cols != v.size()) {
        throw ShapeError("matvec: matrix cols (" + std::to_string(m.cols) +
                         ") != vector length (" + std::to_string(v.size()) + ")");
    }
    DenseVector out(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        double acc = 0.0;
        const double* row = m.values.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * v[c];
        out[r] = acc;
    }
    return out;
}

DenseVector matvec_transposed(const DenseMatrix& m, const DenseVector& v) {
    if (m.rows != v.size()) {
        throw ShapeError("matvec_transposed: matrix rows (" + std::to_string(m.rows) +
                         ") != vector length (" + std::to_string(v.size()) + ")");
    }
    DenseVector out(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.values.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) out[c] += row[c] * v[r];
    }
    return out;
}

DenseVector softmax(const DenseVector& v) {
    if (v.empty()) throw ShapeError("softmax: empty input vector");
    const double peak = *std::max_element(v.begin(), v.end());
    DenseVector out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - peak);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

namespace {

void require_distribution(const DenseVector& p, const char* which) {
    double sum = 0.0;
    for (double x : p) {
        if (x < 0.0) {
            throw ValidationError(std::string("kl_divergence: ") + which +
                                  " has a negative entry");
        }
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw ValidationError(std::string("kl_divergence: ") + which +
                              " does not sum to 1 (sum=" + std::to_string(sum) + ")");
    }
}

}  // namespace

double kl_divergence(const DenseVector& p, const DenseVector& q) {
    if (p.size() != q.size()) {
        throw ValidationError("kl_divergence: length mismatch (" + std::to_string(p.size()) +
                              " vs " + std::to_string(q.size()) + ")");
    }
    require_distribution(p, "first argument");
    require_distribution(q, "second argument");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        sum += p[i] * std::log(p[i] / std::max(q[i], kProbFloor));
    }
    return std::max(sum, 0.0);
}

double cross_entropy_loss(const DenseVector& logits, std::size_t label) {
    if (logits.empty()) throw ShapeError("cross_entropy_loss: empty logits");
    if (label >= logits.size()) {
        throw ValidationError("cross_entropy_loss: label " + std::to_string(label) +
                              " out of range for " + std::to_string(logits.size()) + " classes");
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - peak);
    return peak + std::log(sum) - logits[label];
}

std::size_t argmax(const DenseVector& v) {
    if (v.empty()) throw ShapeError("argmax: empty input vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

double linf_distance(const DenseVector& a, const DenseVector& b) {
    if (a.size() != b.size()) {
        throw ShapeError("linf_distance: length mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
    }
    double peak = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) peak = std::max(peak, std::abs(a[i] - b[i]));
    return peak;
}

}  // namespace decoupler
