#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hfmca/costs.hpp"
#include "hfmca/linalg.hpp"

namespace hfmca {

struct SpectrumResult {
    std::size_t layer = 0;
    std::vector<double> sigma;      // clamped to [0, 1], descending
    std::vector<double> raw_sigma;  // before clamping
    Matrix u_rot;                   // rotation of the whitened phi features
    Matrix v_rot;
    SymMatrix whiten_phi;           // (R_phi + ridge I)^-1/2
    SymMatrix whiten_psi;
    double ridge = 0.0;

    double max_raw() const;
};

// Raw values above 1 + kSpectrumWarn are reported, above 1 + kSpectrumFail
// rejected as broken statistics.
constexpr double kSpectrumWarn = 1e-6;
constexpr double kSpectrumFail = 1e-3;

SpectrumResult extract_spectrum(const CorrStats& stats, double ridge, std::size_t layer = 0);

// Rows of z (positions x K) mapped to rotation^T whitener z.
Matrix normalize_features(const Matrix& z, const SymMatrix& whitener, const Matrix& rotation);

// rotation^T whitener R whitener rotation: E[phi_hat phi_hat^T] for features
// with second moment R.
Matrix normalized_moment(const SymMatrix& r, const SymMatrix& whitener, const Matrix& rotation);

// sum_k sqrt(sigma_k) phi_k psi_k, plus 1 for the constant component when asked.
double density_ratio(std::span<const double> phi_hat, std::span<const double> psi_hat,
                     std::span<const double> sigma, bool include_constant = false);

// Canonical correlations between two feature sets on the same samples
// (rows), descending: 1 for shared directions, 0 for orthogonal ones.
// Directions with variance at or below ridge * mean variance are dropped
// and report 0; the rest are whitened exactly, so a set against itself
// gives 1 on every kept direction.
std::vector<double> compare_bases(const Matrix& features_a, const Matrix& features_b, double ridge);

// sum_k log(1 - min(sigma_k, 1 - ridge))
double optimal_cost(std::span<const double> sigma, double ridge);

// Mean of z_p z_p^T over rows.
SymMatrix second_moment(const Matrix& z);

}  // namespace hfmca
