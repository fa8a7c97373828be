#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace hfmca {

// Small dense row-major matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> diag);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool square() const { return rows_ == cols_; }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    Matrix transposed() const;
    double trace() const;
    double max_abs() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double factor);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double factor);
Matrix operator*(const Matrix& a, const Matrix& b);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Square matrix symmetrized on construction: (m + m^T) / 2.
class SymMatrix {
public:
    SymMatrix() = default;
    SymMatrix(const Matrix& m);  // NOLINT: implicit by intent
    std::size_t order() const { return m_.rows(); }
    const Matrix& matrix() const { return m_; }
    operator const Matrix&() const { return m_; }  // NOLINT

private:
    Matrix m_;
};

// Lower Cholesky factor of m + ridge I. Throws NumericalError when the matrix
// is not positive definite.
Matrix cholesky_factor(const SymMatrix& m, double ridge);

// log det(m + ridge I) = 2 sum log diag(chol).
double cholesky_logdet(const SymMatrix& m, double ridge);

// (m + ridge I)^-1 via Cholesky.
SymMatrix ridge_inverse(const SymMatrix& m, double ridge);

struct SymEigen {
    std::vector<double> values;  // descending
    Matrix vectors;              // column k pairs with values[k]
};

// Cyclic Jacobi rotations.
SymEigen eigen_sym(const SymMatrix& m);

double min_eigenvalue(const SymMatrix& m);

// S with S (m + ridge I) S = I, built from the eigendecomposition.
SymMatrix inv_sqrt_sym(const SymMatrix& m, double ridge);

struct SvdResult {
    Matrix u;
    std::vector<double> singular_values;  // descending, non-negative
    Matrix v;
};

// m = U diag(s) V^T for an n x n matrix (one-sided Jacobi).
SvdResult svd_small(const Matrix& m);

}  // namespace hfmca
