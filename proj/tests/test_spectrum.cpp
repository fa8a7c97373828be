#include <gtest/gtest.h>

#include <cmath>

#include "hfmca/errors.hpp"
#include "hfmca/oracle.hpp"
#include "hfmca/spectrum.hpp"
#include "support.hpp"

using namespace hfmca;
using hfmca::testing::random_matrix;

namespace {

Tensor as_tensor(const Matrix& m) {
    return Tensor::from({m.rows(), m.cols()}, std::vector<double>(m.values().begin(), m.values().end()));
}

CorrStats stats_of(const Matrix& f, const Matrix& g) { return stats_pairwise(as_tensor(f), as_tensor(g)).values(); }

// Paired features with a planted dependence: g = f mix + noise.
std::pair<Matrix, Matrix> dependent_features(std::size_t n, std::size_t k, Rng& rng) {
    const Matrix f = random_matrix(n, k, rng);
    const Matrix mix = random_matrix(k, k, rng);
    Matrix g = f * mix * 0.5 + random_matrix(n, k, rng);
    return {f, g};
}

CorrStats onehot_stats(const JointTable& j) {
    CorrStats s;
    s.r_phi = SymMatrix(Matrix::diagonal(j.px()));
    s.r_psi = SymMatrix(Matrix::diagonal(j.py()));
    s.p_cross = Matrix(j.n(), j.m(), std::vector<double>(j.values().begin(), j.values().end()));
    s.m_phi = s.m_psi = 1.0;
    return s;
}

}  // namespace

TEST(ExtractSpectrum, Examples) {
    CorrStats s;
    s.r_phi = SymMatrix(Matrix::identity(3));
    s.r_psi = SymMatrix(Matrix::identity(3));
    s.p_cross = Matrix(3, 3);
    for (double v : extract_spectrum(s, 0.0).sigma) EXPECT_EQ(v, 0.0);
    s.p_cross = Matrix::identity(3);
    for (double v : extract_spectrum(s, 0.0).sigma) EXPECT_NEAR(v, 1.0, 1e-14);

    const SpectrumResult r = extract_spectrum(onehot_stats(JointTable(2, 2, {0.4, 0.1, 0.1, 0.4})), 0.0, 2);
    EXPECT_EQ(r.layer, 2u);
    EXPECT_NEAR(r.sigma[0], 1.0, 1e-12);
    EXPECT_NEAR(r.sigma[1], 0.36, 1e-12);
}

TEST(ExtractSpectrum, MatchesExactOracleOnRandomTables) {
    Rng rng(1);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> p(20);
        double t = 0.0;
        for (double& v : p) t += (v = rng.uniform(0.05, 1.0));
        for (double& v : p) v /= t;
        const JointTable j(4, 5, p);
        const auto exact = exact_decompose(j).sigma;
        const auto got = extract_spectrum(onehot_stats(j), 0.0).sigma;
        for (std::size_t k = 0; k < exact.size(); ++k) EXPECT_NEAR(got[k], exact[k], 1e-10);
    }
}

TEST(ExtractSpectrum, RangeAndOvershoot) {
    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        const auto [f, g] = dependent_features(200, 5, rng);
        const SpectrumResult r = extract_spectrum(stats_of(f, g), 0.0);
        EXPECT_LE(r.max_raw(), 1.0 + kSpectrumWarn);
        for (std::size_t k = 0; k < r.sigma.size(); ++k) {
            EXPECT_GE(r.sigma[k], 0.0);
            if (k > 0) {
                EXPECT_GE(r.sigma[k - 1], r.sigma[k]);
            }
        }
    }
    CorrStats bad;
    bad.r_phi = SymMatrix(Matrix::identity(2));
    bad.r_psi = SymMatrix(Matrix::identity(2));
    bad.p_cross = Matrix::identity(2) * 2.0;
    EXPECT_THROW(extract_spectrum(bad, 0.0), NumericalError);
    bad.p_cross = Matrix::identity(2) * (1.0 + 1e-5);
    const SpectrumResult r = extract_spectrum(bad, 0.0);
    EXPECT_EQ(r.sigma[0], 1.0);
    EXPECT_GT(r.max_raw(), 1.0 + kSpectrumWarn);
}

TEST(ExtractSpectrum, InvariantToInvertibleReparameterization) {
    Rng rng(3);
    for (std::size_t k : {2u, 4u, 8u}) {
        const auto [f, g] = dependent_features(400, k, rng);
        const auto base = extract_spectrum(stats_of(f, g), 0.0).sigma;
        const Matrix a = random_matrix(k, k, rng) + Matrix::identity(k) * 2.0;
        const Matrix b = random_matrix(k, k, rng) + Matrix::identity(k) * 2.0;
        const auto moved = extract_spectrum(stats_of(f * a, g * b), 0.0).sigma;
        for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(moved[i], base[i], 1e-8) << "k " << k;
    }
}

TEST(NormalizeFeatures, WhitensFittingBatch) {
    Rng rng(4);
    const auto [f, g] = dependent_features(300, 6, rng);
    const CorrStats s = stats_of(f, g);
    const SpectrumResult r = extract_spectrum(s, 0.0);
    const Matrix id = Matrix::identity(6);
    EXPECT_LE(max_abs_diff(normalized_moment(s.r_phi, r.whiten_phi, r.u_rot), id), 1e-8);
    EXPECT_LE(max_abs_diff(normalized_moment(s.r_psi, r.whiten_psi, r.v_rot), id), 1e-8);
    const Matrix phi = normalize_features(f, r.whiten_phi, r.u_rot);
    EXPECT_LE(max_abs_diff(second_moment(phi), id), 1e-8);
    EXPECT_THROW(normalize_features(random_matrix(3, 5, rng), r.whiten_phi, r.u_rot), ShapeError);
}

TEST(NormalizeFeatures, OrthonormalInputUnchanged) {
    Rng rng(5);
    const Matrix raw = random_matrix(100, 4, rng);
    const Matrix z = raw * inv_sqrt_sym(second_moment(raw), 0.0).matrix();
    const SpectrumResult r = extract_spectrum(stats_of(z, z), 0.0);
    EXPECT_LE(max_abs_diff(normalize_features(z, r.whiten_phi, Matrix::identity(4)), z), 1e-10);
}

TEST(DensityRatio, Examples) {
    const std::vector<double> e1 = {1.0, 0.0}, zero = {0.0, 0.0}, one = {1.0, 0.0};
    EXPECT_EQ(density_ratio(e1, e1, zero), 0.0);
    EXPECT_EQ(density_ratio(e1, e1, one), 1.0);
    EXPECT_EQ(density_ratio(e1, e1, zero, true), 1.0);
    const std::vector<double> shortv = {1.0};
    EXPECT_THROW(density_ratio(shortv, e1, one), ShapeError);
}

// Full one-hot features carry the constant component themselves.
TEST(DensityRatio, ReconstructsOracleTable) {
    const JointTable j(2, 2, {0.4, 0.1, 0.1, 0.4});
    const SpectrumResult r = extract_spectrum(onehot_stats(j), 0.0);
    const Matrix phi = normalize_features(Matrix::identity(2), r.whiten_phi, r.u_rot);
    const Matrix psi = normalize_features(Matrix::identity(2), r.whiten_psi, r.v_rot);
    for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t y = 0; y < 2; ++y) {
            const std::vector<double> a = {phi(x, 0), phi(x, 1)}, b = {psi(y, 0), psi(y, 1)};
            EXPECT_NEAR(density_ratio(a, b, r.sigma), j.ratio(x, y), 1e-8);
        }
    EXPECT_NEAR(j.ratio(0, 0), 1.6, 1e-15);
    EXPECT_NEAR(j.ratio(0, 1), 0.4, 1e-15);
}

// A single zero-mean feature sees only the nontrivial component; the
// constant has to be appended.
TEST(DensityRatio, ConstantComponentForCenteredFeatures) {
    const JointTable j(2, 2, {0.4, 0.1, 0.1, 0.4});
    const double f[] = {1.0, -1.0};
    CorrStats s;
    s.r_phi = SymMatrix(Matrix::identity(1));
    s.r_psi = SymMatrix(Matrix::identity(1));
    double p = 0.0;
    for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t y = 0; y < 2; ++y) p += j(x, y) * f[x] * f[y];
    s.p_cross = Matrix::from_rows({{p}});
    const SpectrumResult r = extract_spectrum(s, 0.0);
    EXPECT_NEAR(r.sigma[0], 0.36, 1e-12);
    for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t y = 0; y < 2; ++y) {
            const std::vector<double> a = {f[x] * r.whiten_phi.matrix()(0, 0) * r.u_rot(0, 0)};
            const std::vector<double> b = {f[y] * r.whiten_psi.matrix()(0, 0) * r.v_rot(0, 0)};
            EXPECT_NEAR(density_ratio(a, b, r.sigma, true), j.ratio(x, y), 1e-8);
        }
}

TEST(DensityRatio, TraceIdentity) {
    Rng rng(6);
    const auto [f, g] = dependent_features(500, 5, rng);
    const SpectrumResult r = extract_spectrum(stats_of(f, g), 0.0);
    const Matrix phi = normalize_features(f, r.whiten_phi, r.u_rot);
    const Matrix psi = normalize_features(g, r.whiten_psi, r.v_rot);
    double mean = 0.0;
    for (std::size_t i = 0; i < f.rows(); ++i) {
        std::vector<double> a(5), b(5);
        for (std::size_t k = 0; k < 5; ++k) {
            a[k] = phi(i, k);
            b[k] = psi(i, k);
        }
        mean += density_ratio(a, b, r.raw_sigma);
    }
    mean /= static_cast<double>(f.rows());
    double trace = 0.0;
    for (double s : r.raw_sigma) trace += s;
    EXPECT_NEAR(mean, trace, 1e-6);
}

TEST(CompareBases, SelfAndRotation) {
    Rng rng(7);
    const Matrix a = random_matrix(1024, 8, rng);
    for (double v : compare_bases(a, a, 0.0)) EXPECT_NEAR(v, 1.0, 1e-8);
    const SvdResult q = svd_small(random_matrix(8, 8, rng));
    for (double v : compare_bases(a, a * q.u, 0.0)) EXPECT_NEAR(v, 1.0, 1e-8);
    EXPECT_THROW(compare_bases(a, random_matrix(10, 8, rng), 0.0), ShapeError);
}

TEST(CompareBases, IndependentNoiseIsNearZero) {
    Rng rng(8);
    for (int rep = 0; rep < 5; ++rep) {
        const auto v = compare_bases(random_matrix(1024, 8, rng), random_matrix(1024, 8, rng), 0.0);
        ASSERT_EQ(v.size(), 8u);
        for (double x : v) EXPECT_LE(x, 0.3);
    }
}

TEST(OptimalCost, Examples) {
    const std::vector<double> zeros(4, 0.0);
    EXPECT_EQ(optimal_cost(zeros, 0.001), 0.0);
    const std::vector<double> one = {0.36};
    EXPECT_NEAR(optimal_cost(one, 0.0), std::log(0.64), 1e-15);
    EXPECT_NEAR(optimal_cost(one, 0.0), -0.446287, 1e-6);
    const std::vector<double> full = {1.0, 1.0};
    EXPECT_NEAR(optimal_cost(full, 0.001), 2.0 * std::log(0.001), 1e-12);
}
