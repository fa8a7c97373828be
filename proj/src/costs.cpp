#include "hfmca/costs.hpp"

#include <cmath>

#include "hfmca/errors.hpp"
#include "hfmca/ops.hpp"

namespace hfmca {

namespace {

Matrix to_matrix(const Tensor& t) {
    return Matrix(t.dim(0), t.dim(1), std::vector<double>(t.data().begin(), t.data().end()));
}

}  // namespace

SymMatrix CorrStats::joint() const {
    const std::size_t a = r_phi.order(), b = r_psi.order();
    Matrix j(a + b, a + b);
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t k = 0; k < a; ++k) j(i, k) = r_phi.matrix()(i, k);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < b; ++k) j(a + i, a + k) = r_psi.matrix()(i, k);
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t k = 0; k < b; ++k) {
            j(i, a + k) = p_cross(i, k);
            j(a + k, i) = p_cross(i, k);
        }
    return SymMatrix(j);
}

CorrStats CorrStats::from_joint(const SymMatrix& joint, std::size_t k_phi) {
    const Matrix& j = joint.matrix();
    if (k_phi > j.rows()) throw ShapeError("from_joint: block larger than matrix");
    const std::size_t a = k_phi, b = j.rows() - k_phi;
    Matrix rp(a, a), rs(b, b), p(a, b);
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t k = 0; k < a; ++k) rp(i, k) = j(i, k);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < b; ++k) rs(i, k) = j(a + i, a + k);
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t k = 0; k < b; ++k) p(i, k) = j(i, a + k);
    CorrStats s;
    s.r_phi = SymMatrix(rp);
    s.r_psi = SymMatrix(rs);
    s.p_cross = p;
    return s;
}

CorrStats CorrTensors::values() const {
    CorrStats s;
    s.r_phi = SymMatrix(to_matrix(r_phi));
    s.r_psi = SymMatrix(to_matrix(r_psi));
    s.p_cross = to_matrix(p_cross);
    s.m_phi = m_phi;
    s.m_psi = m_psi;
    return s;
}

Tensor CorrTensors::joint() const { return assemble_joint(r_phi, p_cross, r_psi); }

CorrTensors stats_pairwise(const Tensor& zf, const Tensor& zg) {
    if (zf.rank() != 2 || zg.rank() != 2) throw ShapeError("stats_pairwise: expected positions x K");
    if (zf.dim(0) != zg.dim(0)) throw ShapeError("stats_pairwise: position counts differ");
    if (zf.dim(0) == 0) throw ShapeError("stats_pairwise: empty input");
    const double p = static_cast<double>(zf.dim(0));
    return {outer_stats(zf, zf), outer_stats(zg, zg), outer_stats(zf, zg), p, p};
}

CorrTensors stats_external(const Tensor& view_feats, const Tensor& group_feats, std::size_t views) {
    if (views == 0) throw ShapeError("stats_external: need at least one view");
    if (view_feats.rank() != 2 || group_feats.rank() != 2)
        throw ShapeError("stats_external: expected row x K feature matrices");
    if (view_feats.dim(0) != group_feats.dim(0) * views)
        throw ShapeError("stats_external: " + std::to_string(view_feats.dim(0)) +
                         " view rows do not match " + std::to_string(group_feats.dim(0)) + " x " +
                         std::to_string(views));
    const Tensor paired = repeat_rows(group_feats, views);
    return {outer_stats(view_feats, view_feats), outer_stats(group_feats, group_feats),
            outer_stats(view_feats, paired), static_cast<double>(view_feats.dim(0)),
            static_cast<double>(group_feats.dim(0))};
}

CorrTensors stats_internal(const Tensor& z_lower, const Tensor& z_upper, std::size_t win_h,
                           std::size_t win_w) {
    if (z_lower.rank() != 4 || z_upper.rank() != 4)
        throw ShapeError("stats_internal: expected NCHW feature maps");
    const std::size_t n = z_lower.dim(0), hl = z_lower.dim(2), wl = z_lower.dim(3);
    const std::size_t hu = z_upper.dim(2), wu = z_upper.dim(3);
    if (z_upper.dim(0) != n) throw ShapeError("stats_internal: batch sizes differ");
    if (win_h == 0 || win_w == 0 || hl + 1 != hu + win_h || wl + 1 != wu + win_w)
        throw ShapeError("stats_internal: lower " + shape_string(z_lower.shape()) + " and upper " +
                         shape_string(z_upper.shape()) + " do not fit a " + std::to_string(win_h) +
                         "x" + std::to_string(win_w) + " window");

    // How many upper windows read each lower element.
    std::vector<double> weights(n * hl * wl);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hl; ++i) {
            const std::size_t rows = std::min(i, hu - 1) + 1 - (i + 1 >= win_h ? i + 1 - win_h : 0);
            for (std::size_t j = 0; j < wl; ++j) {
                const std::size_t cols = std::min(j, wu - 1) + 1 - (j + 1 >= win_w ? j + 1 - win_w : 0);
                weights[(b * hl + i) * wl + j] = static_cast<double>(rows * cols);
            }
        }
    const double m_phi = static_cast<double>(n * hu * wu * win_h * win_w);
    const double m_psi = static_cast<double>(n * hu * wu);

    const Tensor lower_pos = to_positions(z_lower);
    const Tensor upper_pos = to_positions(z_upper);
    const Tensor summed = to_positions(window_sum(z_lower, win_h, win_w));
    const Tensor p_cross = scale(outer_stats(summed, upper_pos), 1.0 / static_cast<double>(win_h * win_w));
    return {weighted_outer(lower_pos, lower_pos, weights, m_phi), outer_stats(upper_pos, upper_pos),
            p_cross, m_phi, m_psi};
}

double logdet_cost(const CorrStats& stats, double ridge) {
    return cholesky_logdet(stats.joint(), ridge) - cholesky_logdet(stats.r_phi, ridge) -
           cholesky_logdet(stats.r_psi, ridge);
}

Tensor logdet_cost_tensor(const CorrTensors& stats, double ridge) {
    return sub(sub(logdet(stats.joint(), ridge), logdet(stats.r_phi, ridge)),
               logdet(stats.r_psi, ridge));
}

Preconditioner make_preconditioner(const CorrStats& estimate, double ridge) {
    return {ridge_inverse(estimate.joint(), ridge), ridge_inverse(estimate.r_phi, ridge),
            ridge_inverse(estimate.r_psi, ridge)};
}

Tensor surrogate_cost(const CorrTensors& stats, const Preconditioner& precond) {
    const Tensor joint = stats.joint();
    if (joint.numel() != precond.joint.matrix().values().size() ||
        stats.r_phi.numel() != precond.phi.matrix().values().size() ||
        stats.r_psi.numel() != precond.psi.matrix().values().size())
        throw ShapeError("surrogate_cost: preconditioner shapes do not match the statistics");
    return sub(sub(frobenius_dot(joint, precond.joint.matrix().values()),
                   frobenius_dot(stats.r_phi, precond.phi.matrix().values())),
               frobenius_dot(stats.r_psi, precond.psi.matrix().values()));
}

AcfFilterBank::AcfFilterBank(double beta) : beta_(beta) {
    if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("filter bank: beta must be in [0, 1)");
}

CorrStats AcfFilterBank::update(std::size_t slot, const CorrStats& stats) {
    const SymMatrix joint = stats.joint();
    Slot& s = slots_[slot];
    if (s.steps == 0 && s.joint_tilde.rows() == 0) s.joint_tilde = Matrix(joint.order(), joint.order());
    if (s.joint_tilde.rows() != joint.order())
        throw ShapeError("filter bank: slot " + std::to_string(slot) + " changed dimension");
    s.steps += 1;
    Matrix& t = s.joint_tilde;
    const auto src = joint.matrix().values();
    auto dst = t.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = beta_ * dst[i] + (1.0 - beta_) * src[i];
    const double correction = 1.0 - std::pow(beta_, static_cast<double>(s.steps));
    CorrStats out = CorrStats::from_joint(SymMatrix(t * (1.0 / correction)), stats.r_phi.order());
    out.m_phi = stats.m_phi;
    out.m_psi = stats.m_psi;
    return out;
}

}  // namespace hfmca
