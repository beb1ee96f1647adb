#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "liftnet/errors.hpp"

namespace liftnet {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);
    static Matrix from_rows(const std::vector<Vector>& rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

/// a * b. Summation over the inner index runs in ascending order so results
/// are bit-reproducible. Throws DimensionError naming both shapes on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// Elementwise helpers (shape-checked).
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);

double frobenius_norm(const Matrix& m);
double l1_norm(const Matrix& m);
double linf_norm(const Matrix& m);
double l1_norm(const Vector& v);
double l2_norm(const Vector& v);

double mean(const Vector& v);
/// Population variance (divide by n), two-pass.
double variance(const Vector& v);

/// Sample Pearson correlation, two-pass formula. Returns 0.0 when either
/// input has (numerically) zero variance; callers that need to distinguish
/// constant inputs should test is_constant() first.
double pearson(const Vector& u, const Vector& v);

/// True when the vector is constant up to relative rounding noise
/// (stddev <= 1e-12 * max(1, |mean|)).
bool is_constant(const Vector& v);

/// Least-squares affine fit y ~ slope*x + intercept.
/// Zero-variance x yields slope 0, intercept mean(y).
struct AffineFit {
    double slope = 0.0;
    double intercept = 0.0;
};
AffineFit lstsq_affine(const Vector& x, const Vector& y);

/// Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.
/// values ascending; vectors holds the matching eigenvectors as columns.
struct EigResult {
    Vector values;
    Matrix vectors;
};

/// Relative asymmetry above this triggers a warning; the input is then
/// symmetrized as (H + H^T)/2 and the sweep proceeds.
inline constexpr double kSymTol = 1e-6;

EigResult sym_eig(const Matrix& h);

/// Orthonormal basis for the column span (modified Gram-Schmidt with
/// re-orthogonalization). Columns with residual below drop_tol * max(1, norm)
/// are treated as dependent and dropped.
Matrix orthonormal_columns(const Matrix& a, double drop_tol = 1e-10);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);
void ensure_finite(const Matrix& m, const std::string& what);
void ensure_finite(const Vector& v, const std::string& what);

} // namespace liftnet
