#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hfmca/linalg.hpp"
#include "hfmca/tensor.hpp"

namespace hfmca {

// p(x, y) on a finite n x m alphabet.
class JointTable {
public:
    JointTable(std::size_t n, std::size_t m, std::vector<double> p);

    std::size_t n() const { return n_; }
    std::size_t m() const { return m_; }
    double operator()(std::size_t x, std::size_t y) const { return p_[x * m_ + y]; }
    std::span<const double> values() const { return p_; }
    const std::vector<double>& px() const { return px_; }
    const std::vector<double>& py() const { return py_; }

    // p(x, y) / (p(x) p(y))
    double ratio(std::size_t x, std::size_t y) const;

private:
    std::size_t n_, m_;
    std::vector<double> p_;
    std::vector<double> px_, py_;
};

struct ExactDecomposition {
    std::vector<double> sigma;  // descending, sigma[0] = 1
    Matrix phi;                 // n x K, column k orthonormal under p(x)
    Matrix psi;                 // m x K
};

ExactDecomposition exact_decompose(const JointTable& joint);

// sum_k sqrt(sigma_k) phi_k(x) psi_k(y)
double reconstruct_ratio(const ExactDecomposition& d, std::size_t x, std::size_t y);

// Markov chain over levels 0..S-1: root distribution on level 0 and
// row-stochastic kernels p(x_{s+1} | x_s).
struct ChainSpec {
    std::vector<double> root;
    std::vector<Matrix> kernels;

    std::vector<std::size_t> alphabets() const;
};

struct ChainJoint {
    std::vector<std::size_t> alphabets;
    std::vector<double> p;  // row-major over (x_0, ..., x_{S-1})

    std::size_t states() const { return p.size(); }
    std::vector<double> marginal(std::size_t level) const;
    // Pairwise joint of neighbouring levels s, s+1.
    JointTable pair(std::size_t level) const;
};

constexpr std::size_t kMaxChainStates = 1000000;

ChainJoint chain_joint(const ChainSpec& spec);

// Composite-to-component chain: level 0 is the whole, each further level is
// one of `views` randomly drawn components of the level above, picked
// uniformly (so conditional masses are multiples of 1 / views). When
// views * a < b, upper symbols get extra components so every lower symbol
// stays reachable.
ChainSpec definition1_chain(std::span<const std::size_t> alphabets, std::size_t views,
                            std::uint64_t seed);

// max over the support of |log p(x)/prod p(x_s) - sum_s log rho_s(x_s, x_{s+1})|
double telescoping_check(const ChainJoint& joint);

// N x n x 1 x 1 unit coordinate images.
Tensor onehot_embed(std::span<const std::size_t> symbols, std::size_t n);

// Draws `count` (x, y) pairs from the table, deterministic in the seed.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(const JointTable& joint,
                                                              std::size_t count, std::uint64_t seed);

// Lines "x,y,probability"; a non-numeric first line is treated as a header.
JointTable read_joint_csv(const std::string& path);

}  // namespace hfmca
