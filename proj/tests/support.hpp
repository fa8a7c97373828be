#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hfmca/costs.hpp"
#include "hfmca/linalg.hpp"
#include "hfmca/network.hpp"
#include "hfmca/rng.hpp"
#include "hfmca/tensor.hpp"
#include "hfmca/trainer.hpp"

namespace hfmca::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool param = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return param ? Tensor::parameter(std::move(shape), std::move(v)) : Tensor::from(std::move(shape), std::move(v));
}

inline std::vector<double> random_values(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& x : m.values()) x = rng.normal();
    return m;
}

// Random symmetric positive definite matrix with eigenvalues above `floor`.
inline Matrix random_gaussian(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

inline SymMatrix random_spd(std::size_t n, Rng& rng, double floor = 0.1) {
    const Matrix a = random_matrix(n, n, rng);
    return SymMatrix(a * a.transposed() * (1.0 / static_cast<double>(n)) + Matrix::identity(n) * floor);
}

inline Matrix to_matrix(const Tensor& t) {
    return Matrix(t.dim(0), t.numel() / t.dim(0), std::vector<double>(t.data().begin(), t.data().end()));
}

// d f / d leaves through the tape, flattened in leaf order.
inline std::vector<double> tape_gradient(const std::vector<Tensor>& leaves, const std::function<Tensor()>& f) {
    for (auto t : leaves) t.zero_grad();
    {
        Tape tape;
        Tape::Scope scope(tape);
        const Tensor loss = f();
        tape.backward(loss);
    }
    std::vector<double> g;
    for (auto t : leaves) {
        const auto tg = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) g.push_back(tg.empty() ? 0.0 : tg[i]);
        t.zero_grad();
    }
    return g;
}

// Central differences of a scalar function of the leaves' values.
inline std::vector<double> fd_gradient(const std::vector<Tensor>& leaves, const std::function<double()>& f,
                                       double step = 1e-5) {
    std::vector<double> g;
    for (auto t : leaves) {
        auto v = t.mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double keep = v[i];
            v[i] = keep + step;
            const double up = f();
            v[i] = keep - step;
            const double down = f();
            v[i] = keep;
            g.push_back((up - down) / (2.0 * step));
        }
    }
    return g;
}

// ||a - b|| / max(||a||, ||b||)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(std::max(na, nb)), 1e-300);
}

struct GradCheck {
    double rel_error = 0.0;
    double scale = 0.0;  // norm of the numeric gradient
};

inline GradCheck check_gradient(const std::vector<Tensor>& leaves, const std::function<Tensor()>& f,
                                double step = 1e-5) {
    const auto analytic = tape_gradient(leaves, f);
    const auto numeric = fd_gradient(leaves, [&] { return f().item(); }, step);
    double n = 0.0;
    for (double v : numeric) n += v * v;
    return {relative_error(analytic, numeric), std::sqrt(n)};
}

// Literal transcription of the receptive-field statistics: for every batch
// element and upper position, every lower element of its window is paired
// with the upper vector.
inline CorrStats internal_stats_loops(const Tensor& lower, const Tensor& upper, std::size_t wh, std::size_t ww) {
    const std::size_t n = lower.dim(0), k = lower.dim(1), hl = lower.dim(2), wl = lower.dim(3);
    const std::size_t ku = upper.dim(1), hu = upper.dim(2), wu = upper.dim(3);
    const auto L = lower.data(), U = upper.data();
    auto zl = [&](std::size_t b, std::size_t c, std::size_t i, std::size_t j) { return L[((b * k + c) * hl + i) * wl + j]; };
    auto zu = [&](std::size_t b, std::size_t c, std::size_t i, std::size_t j) { return U[((b * ku + c) * hu + i) * wu + j]; };
    Matrix rphi(k, k), rpsi(ku, ku), p(k, ku);
    double mphi = 0.0, mpsi = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hu; ++i)
            for (std::size_t j = 0; j < wu; ++j) {
                for (std::size_t a = 0; a < ku; ++a)
                    for (std::size_t c = 0; c < ku; ++c) rpsi(a, c) += zu(b, a, i, j) * zu(b, c, i, j);
                mpsi += 1.0;
                for (std::size_t di = 0; di < wh; ++di)
                    for (std::size_t dj = 0; dj < ww; ++dj) {
                        for (std::size_t a = 0; a < k; ++a) {
                            for (std::size_t c = 0; c < k; ++c)
                                rphi(a, c) += zl(b, a, i + di, j + dj) * zl(b, c, i + di, j + dj);
                            for (std::size_t c = 0; c < ku; ++c) p(a, c) += zl(b, a, i + di, j + dj) * zu(b, c, i, j);
                        }
                        mphi += 1.0;
                    }
            }
    CorrStats s;
    s.r_phi = rphi * (1.0 / mphi);
    s.r_psi = rpsi * (1.0 / mpsi);
    s.p_cross = p * (1.0 / mphi);
    s.m_phi = mphi;
    s.m_psi = mpsi;
    return s;
}

inline double max_stats_diff(const CorrStats& a, const CorrStats& b) {
    return std::max({max_abs_diff(a.r_phi, b.r_phi), max_abs_diff(a.r_psi, b.r_psi), max_abs_diff(a.p_cross, b.p_cross)});
}

struct NetworkGradientCheck {
    double fd_rel_error = 0.0;        // surrogate gradient vs finite differences of the true cost
    double surrogate_vs_exact = 0.0;  // surrogate gradient vs autodiff through the log-determinants
    std::size_t parameters = 0;
};

// Whole hierarchy (internal + external terms) on one fixed batch of views.
// Preconditioners are the exact inverses of the current statistics, which
// is what the filter bank yields with beta = 0.
inline NetworkGradientCheck network_gradient_check(const NetworkSpec& spec, const Tensor& views_batch,
                                                   std::size_t views, double ridge, double internal_weight,
                                                   std::uint64_t seed) {
    Network net(spec, seed);
    const std::uint64_t noise = derive_seed(seed, "noise");
    std::vector<Tensor> leaves;
    for (const auto& p : net.parameters()) leaves.push_back(p.tensor);

    auto weight = [&](const PassStats& ps, std::size_t i) { return i == ps.external_index ? 1.0 : internal_weight; };
    auto pass = [&] { return hierarchy_pass(net, views_batch, views, Mode::train, noise, true, true, false); };
    auto total = [&](bool surrogate) {
        const PassStats ps = pass();
        Tensor loss;
        for (std::size_t i = 0; i < ps.stats.size(); ++i) {
            const Tensor term = surrogate
                                    ? surrogate_cost(ps.stats[i], make_preconditioner(ps.stats[i].values(), ridge))
                                    : logdet_cost_tensor(ps.stats[i], ridge);
            const Tensor weighted = scale(term, weight(ps, i));
            loss = loss.defined() ? add(loss, weighted) : weighted;
        }
        return loss;
    };
    auto true_cost = [&] {
        const PassStats ps = pass();
        double c = 0.0;
        for (std::size_t i = 0; i < ps.stats.size(); ++i) c += weight(ps, i) * logdet_cost(ps.stats[i].values(), ridge);
        return c;
    };
    const auto g_sur = tape_gradient(leaves, [&] { return total(true); });
    const auto g_exact = tape_gradient(leaves, [&] { return total(false); });
    const auto g_fd = fd_gradient(leaves, true_cost);
    return {relative_error(g_sur, g_fd), relative_error(g_sur, g_exact), g_sur.size()};
}

}  // namespace hfmca::testing
