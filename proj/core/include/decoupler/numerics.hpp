#pragma once

#include <cstddef>
#include <vector>

namespace decoupler {

/// All arithmetic is 64-bit: oracle/engine agreement checks need headroom
/// beyond 32-bit noise.
using DenseVector = std::vector<double>;

/// Row-major dense matrix.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    static DenseMatrix identity(std::size_t n);

    bool operator==(const DenseMatrix&) const = default;
};

/// Floor applied to second-argument probabilities in kl_divergence before the
/// ratio, so zero entries stay finite.
inline constexpr double kProbFloor = 1e-12;

/// m * v. Throws ShapeError naming both dimensions on mismatch.
DenseVector matvec(const DenseMatrix& m, const DenseVector& v);

/// mᵀ * v without materializing the transpose.
DenseVector matvec_transposed(const DenseMatrix& m, const DenseVector& v);

/// Max-subtraction stabilized softmax; outputs sum to 1 within 1e-9 and the
/// argmax is preserved. Throws ShapeError on an empty vector.
DenseVector softmax(const DenseVector& v);

/// Σ p_i ln(p_i / q_i) with 0·ln(0/q) = 0 and q floored at kProbFloor.
/// Both inputs must be probability vectors of equal length (entries ≥ 0,
/// sums within 1e-6 of 1). Result is clamped non-negative.
double kl_divergence(const DenseVector& p, const DenseVector& q);

/// −ln softmax(logits)[label], computed through log-sum-exp.
double cross_entropy_loss(const DenseVector& logits, std::size_t label);

/// Index of the largest entry; ties break toward the lower index.
std::size_t argmax(const DenseVector& v);

double linf_distance(const DenseVector& a, const DenseVector& b);

}  // namespace decoupler
