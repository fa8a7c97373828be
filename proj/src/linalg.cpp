#include "hfmca/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hfmca/errors.hpp"

namespace hfmca {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows * cols) throw ShapeError("matrix: value count does not match dims");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("matrix: ragged rows");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

double Matrix::trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
    return t;
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    if (rows_ != other.rows_ || cols_ != other.cols_) throw ShapeError("matrix: += dims differ");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    if (rows_ != other.rows_ || cols_ != other.cols_) throw ShapeError("matrix: -= dims differ");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
}

Matrix& Matrix::operator*=(double factor) {
    for (double& v : values_) v *= factor;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double factor) { return a *= factor; }

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matrix: product dims differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).max_abs(); }

SymMatrix::SymMatrix(const Matrix& m) : m_(m.rows(), m.cols()) {
    if (!m.square()) throw ShapeError("symmetric matrix must be square");
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) m_(i, j) = 0.5 * (m(i, j) + m(j, i));
}

Matrix cholesky_factor(const SymMatrix& sym, double ridge) {
    const Matrix& m = sym.matrix();
    const std::size_t n = m.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = m(j, j) + ridge;
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0) || !std::isfinite(d))
            throw NumericalError("cholesky: matrix is not positive definite (pivot " +
                                 std::to_string(j) + ")");
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

double cholesky_logdet(const SymMatrix& m, double ridge) {
    const Matrix l = cholesky_factor(m, ridge);
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

SymMatrix ridge_inverse(const SymMatrix& m, double ridge) {
    const Matrix l = cholesky_factor(m, ridge);
    const std::size_t n = l.rows();
    // Invert L column by column, then inv = L^-T L^-1.
    Matrix linv(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        linv(c, c) = 1.0 / l(c, c);
        for (std::size_t i = c + 1; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = c; k < i; ++k) s -= l(i, k) * linv(k, c);
            linv(i, c) = s / l(i, i);
        }
    }
    Matrix inv(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t k = i; k < n; ++k) s += linv(k, i) * linv(k, j);
            inv(i, j) = s;
            inv(j, i) = s;
        }
    return SymMatrix(inv);
}

SymEigen eigen_sym(const SymMatrix& sym) {
    Matrix a = sym.matrix();
    const std::size_t n = a.rows();
    Matrix v = Matrix::identity(n);

    const double scale = std::max(a.max_abs(), 1e-300);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-15 * scale) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    SymEigen out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

double min_eigenvalue(const SymMatrix& m) {
    const SymEigen e = eigen_sym(m);
    return e.values.empty() ? 0.0 : e.values.back();
}

SymMatrix inv_sqrt_sym(const SymMatrix& m, double ridge) {
    // Cholesky first so that indefinite input fails the same way everywhere.
    (void)cholesky_factor(m, ridge);
    const SymEigen e = eigen_sym(m);
    const std::size_t n = m.order();
    Matrix s(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double lam = e.values[k] + ridge;
        if (!(lam > 0.0)) throw NumericalError("inv_sqrt_sym: non-positive eigenvalue");
        const double w = 1.0 / std::sqrt(lam);
        for (std::size_t i = 0; i < n; ++i) {
            const double vi = e.vectors(i, k) * w;
            for (std::size_t j = 0; j < n; ++j) s(i, j) += vi * e.vectors(j, k);
        }
    }
    return SymMatrix(s);
}

SvdResult svd_small(const Matrix& m) {
    if (!m.square()) throw ShapeError("svd_small: matrix must be square");
    const std::size_t n = m.rows();
    // Work on columns: W = M V, rotate V until columns of W are orthogonal.
    Matrix w = m;
    Matrix v = Matrix::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    alpha += w(i, p) * w(i, p);
                    beta += w(i, q) * w(i, q);
                    gamma += w(i, p) * w(i, q);
                }
                if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double wp = w(i, p);
                    const double wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                    const double vp = v(i, p);
                    const double vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> norms(n);
    for (std::size_t k = 0; k < n; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += w(i, k) * w(i, k);
        norms[k] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    SvdResult out;
    out.singular_values.resize(n);
    out.u = Matrix(n, n);
    out.v = Matrix(n, n);
    const double tiny = std::max(norms.empty() ? 0.0 : norms[order[0]], 1.0) * 1e-13;
    std::vector<bool> filled(n, false);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.singular_values[k] = norms[src];
        for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v(i, src);
        if (norms[src] > tiny) {
            for (std::size_t i = 0; i < n; ++i) out.u(i, k) = w(i, src) / norms[src];
            filled[k] = true;
        }
    }
    // Complete U for (numerically) zero singular values by Gram-Schmidt on
    // the canonical basis.
    std::size_t candidate = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (filled[k]) continue;
        while (candidate < n) {
            std::vector<double> x(n, 0.0);
            x[candidate++] = 1.0;
            for (int pass = 0; pass < 2; ++pass)
                for (std::size_t j = 0; j < n; ++j) {
                    if (!filled[j]) continue;
                    double d = 0.0;
                    for (std::size_t i = 0; i < n; ++i) d += out.u(i, j) * x[i];
                    for (std::size_t i = 0; i < n; ++i) x[i] -= d * out.u(i, j);
                }
            double nx = 0.0;
            for (double xi : x) nx += xi * xi;
            nx = std::sqrt(nx);
            if (nx > 1e-6) {
                for (std::size_t i = 0; i < n; ++i) out.u(i, k) = x[i] / nx;
                filled[k] = true;
                break;
            }
        }
    }
    return out;
}

}  // namespace hfmca
