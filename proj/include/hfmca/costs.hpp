#pragma once

#include <cstddef>
#include <cstdint>
#include <map>

#include "hfmca/linalg.hpp"
#include "hfmca/tensor.hpp"

namespace hfmca {

// Second-moment blocks of one (phi, psi) feature pair.
struct CorrStats {
    SymMatrix r_phi;
    SymMatrix r_psi;
    Matrix p_cross;
    double m_phi = 0.0;  // number of terms accumulated into r_phi and p_cross
    double m_psi = 0.0;

    SymMatrix joint() const;
    static CorrStats from_joint(const SymMatrix& joint, std::size_t k_phi);
};

// Same blocks kept on the tape so costs can be differentiated.
struct CorrTensors {
    Tensor r_phi;
    Tensor r_psi;
    Tensor p_cross;
    double m_phi = 0.0;
    double m_psi = 0.0;

    CorrStats values() const;
    Tensor joint() const;
};

// Paired rows of zf and zg (positions x K).
CorrTensors stats_pairwise(const Tensor& zf, const Tensor& zg);

// view_feats holds (B L) x K rows, the L views of source b at rows b L .. b L + L - 1;
// group_feats is B x K.
CorrTensors stats_external(const Tensor& view_feats, const Tensor& group_feats, std::size_t views);

// Every upper element (i, j) is paired with the win_h x win_w lower window
// starting at (i, j). Edge lower elements enter r_phi as often as windows cover them.
CorrTensors stats_internal(const Tensor& z_lower, const Tensor& z_upper, std::size_t win_h,
                           std::size_t win_w);

// logdet(J + rI) - logdet(R_phi + rI) - logdet(R_psi + rI)
double logdet_cost(const CorrStats& stats, double ridge);
Tensor logdet_cost_tensor(const CorrTensors& stats, double ridge);

// Frozen (estimate + ridge I)^-1 for each of the three blocks.
struct Preconditioner {
    SymMatrix joint;
    SymMatrix phi;
    SymMatrix psi;
};

Preconditioner make_preconditioner(const CorrStats& estimate, double ridge);

// tr(P_J J) - tr(P_phi R_phi) - tr(P_psi R_psi); its gradient is the logdet
// cost gradient with the inverses replaced by the preconditioner.
Tensor surrogate_cost(const CorrTensors& stats, const Preconditioner& precond);

// Exponentially smoothed, bias-corrected correlation estimates, one slot per
// cost term.
class AcfFilterBank {
public:
    struct Slot {
        Matrix joint_tilde;  // smoothed joint block; zero-initialized
        std::uint64_t steps = 0;
    };

    explicit AcfFilterBank(double beta = 0.0);

    double beta() const { return beta_; }

    // Folds in one instantaneous estimate, returns the bias-corrected one.
    CorrStats update(std::size_t slot, const CorrStats& stats);

    const std::map<std::size_t, Slot>& slots() const { return slots_; }
    void restore(std::size_t slot, Slot value) { slots_[slot] = std::move(value); }

private:
    double beta_;
    std::map<std::size_t, Slot> slots_;
};

}  // namespace hfmca
