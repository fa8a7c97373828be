#include "hfmca/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hfmca/errors.hpp"

namespace hfmca {

namespace {

// Zero-pads a rectangular matrix to square so svd_small applies.
SvdResult svd_any(const Matrix& m) {
    if (m.square()) return svd_small(m);
    const std::size_t n = std::max(m.rows(), m.cols());
    Matrix sq(n, n);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) sq(i, j) = m(i, j);
    SvdResult r = svd_small(sq);
    const std::size_t k = std::min(m.rows(), m.cols());
    SvdResult out;
    out.singular_values.assign(r.singular_values.begin(), r.singular_values.begin() + k);
    out.u = Matrix(m.rows(), m.rows());
    out.v = Matrix(m.cols(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.rows(); ++j) out.u(i, j) = r.u(i, j);
    for (std::size_t i = 0; i < m.cols(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out.v(i, j) = r.v(i, j);
    return out;
}

Matrix centered(const Matrix& z) {
    Matrix c = z;
    for (std::size_t j = 0; j < z.cols(); ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i) mu += z(i, j);
        mu /= static_cast<double>(z.rows());
        for (std::size_t i = 0; i < z.rows(); ++i) c(i, j) -= mu;
    }
    return c;
}

Matrix cross_moment(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    for (std::size_t p = 0; p < a.rows(); ++p)
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ai = a(p, i);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += ai * b(p, j);
        }
    return out * (1.0 / static_cast<double>(a.rows()));
}

// Exact whitening restricted to directions whose eigenvalue exceeds
// ridge * mean eigenvalue; columns are the kept directions.
Matrix whitening_basis(const SymMatrix& m, double ridge) {
    const SymEigen e = eigen_sym(m);
    double mean = 0.0;
    for (double v : e.values) mean += v;
    mean /= static_cast<double>(std::max<std::size_t>(e.values.size(), 1));
    const double floor = std::max(ridge * mean, 1e-14 * std::max(mean, 0.0));
    std::size_t kept = 0;
    while (kept < e.values.size() && e.values[kept] > floor) ++kept;
    Matrix w(m.order(), kept);
    for (std::size_t k = 0; k < kept; ++k) {
        const double s = 1.0 / std::sqrt(e.values[k]);
        for (std::size_t i = 0; i < m.order(); ++i) w(i, k) = e.vectors(i, k) * s;
    }
    return w;
}

}  // namespace

double SpectrumResult::max_raw() const {
    double m = 0.0;
    for (double v : raw_sigma) m = std::max(m, v);
    return m;
}

SpectrumResult extract_spectrum(const CorrStats& stats, double ridge, std::size_t layer) {
    SpectrumResult r;
    r.layer = layer;
    r.ridge = ridge;
    r.whiten_phi = inv_sqrt_sym(stats.r_phi, ridge);
    r.whiten_psi = inv_sqrt_sym(stats.r_psi, ridge);
    const Matrix c = r.whiten_phi.matrix() * stats.p_cross * r.whiten_psi.matrix();
    const SvdResult svd = svd_any(c);
    r.u_rot = svd.u;
    r.v_rot = svd.v;
    for (double s : svd.singular_values) {
        const double sigma = s * s;
        if (sigma > 1.0 + kSpectrumFail)
            throw NumericalError("spectrum: eigenvalue " + std::to_string(sigma) +
                                 " exceeds 1; statistics are inconsistent");
        r.raw_sigma.push_back(sigma);
        r.sigma.push_back(std::clamp(sigma, 0.0, 1.0));
    }
    return r;
}

Matrix normalize_features(const Matrix& z, const SymMatrix& whitener, const Matrix& rotation) {
    if (z.cols() != whitener.order() || rotation.rows() != whitener.order())
        throw ShapeError("normalize_features: dims do not match the spectrum");
    // Row form of rotation^T W z_p is z_p^T W rotation.
    return z * (whitener.matrix() * rotation);
}

Matrix normalized_moment(const SymMatrix& r, const SymMatrix& whitener, const Matrix& rotation) {
    const Matrix t = whitener.matrix() * rotation;
    return t.transposed() * r.matrix() * t;
}

double density_ratio(std::span<const double> phi_hat, std::span<const double> psi_hat,
                     std::span<const double> sigma, bool include_constant) {
    if (phi_hat.size() < sigma.size() || psi_hat.size() < sigma.size())
        throw ShapeError("density_ratio: feature length below spectrum length");
    double r = include_constant ? 1.0 : 0.0;
    for (std::size_t k = 0; k < sigma.size(); ++k) r += std::sqrt(sigma[k]) * phi_hat[k] * psi_hat[k];
    return r;
}

std::vector<double> compare_bases(const Matrix& features_a, const Matrix& features_b, double ridge) {
    if (features_a.rows() != features_b.rows() || features_a.rows() < 2)
        throw ShapeError("compare_bases: feature sets must cover the same samples");
    const Matrix a = centered(features_a);
    const Matrix b = centered(features_b);
    const Matrix wa = whitening_basis(SymMatrix(cross_moment(a, a)), ridge);
    const Matrix wb = whitening_basis(SymMatrix(cross_moment(b, b)), ridge);
    std::vector<double> out(std::min(features_a.cols(), features_b.cols()), 0.0);
    if (wa.cols() == 0 || wb.cols() == 0) return out;
    const auto s = svd_any(wa.transposed() * cross_moment(a, b) * wb).singular_values;
    for (std::size_t k = 0; k < s.size() && k < out.size(); ++k) out[k] = std::min(s[k], 1.0);
    return out;
}

double optimal_cost(std::span<const double> sigma, double ridge) {
    double r = 0.0;
    for (double s : sigma) r += std::log(1.0 - std::min(s, 1.0 - ridge));
    return r;
}

SymMatrix second_moment(const Matrix& z) { return SymMatrix(cross_moment(z, z)); }

}  // namespace hfmca
