#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hfmca/rng.hpp"
#include "hfmca/tensor.hpp"

namespace hfmca {

enum class Activation { none, relu, sigmoid };
enum class Mode { train, eval };

// ---- network primitives (NCHW) ----

// Stride 1, no implicit padding. kernel is O x I x Kh x Kw, bias has O entries.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// Zero border of `pad` cells on both spatial axes.
Tensor pad2d(const Tensor& input, std::size_t pad);

Tensor activation(const Tensor& input, Activation kind);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.9;  // weight kept on the old running value
    double epsilon = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Train mode normalizes with batch statistics over (N, H, W) and updates the
// running statistics; eval mode uses the running statistics.
Tensor batchnorm2d(const Tensor& input, const Tensor& scale, const Tensor& shift,
                   BatchNormState& state, Mode mode);

// Non-overlapping window means. Spatial dims must be divisible by the window.
Tensor avgpool2d(const Tensor& input, std::size_t k);
Tensor avgpool2d(const Tensor& input, std::size_t kh, std::size_t kw);

Tensor concat_channels(const std::vector<Tensor>& inputs);

// Appends n_noise channels of U[0,1) noise. The noise is an input: no
// gradient flows into it.
Tensor append_noise(const Tensor& input, std::size_t n_noise, Rng& rng);

// ---- statistics ----

// Mean over rows of a_p b_p^T for P x Ka and P x Kb inputs; Ka x Kb result.
// Rows are accumulated in index order.
Tensor outer_stats(const Tensor& a, const Tensor& b);

// sum_p w_p a_p b_p^T / divisor.
Tensor weighted_outer(const Tensor& a, const Tensor& b, std::span<const double> weights,
                      double divisor);

// log det(m + ridge I) for a symmetric positive definite m.
Tensor logdet(const Tensor& m, double ridge);

// [[r_phi, p_cross], [p_cross^T, r_psi]]
Tensor assemble_joint(const Tensor& r_phi, const Tensor& p_cross, const Tensor& r_psi);

// ---- layout ----

Tensor reshape(const Tensor& input, Shape shape);
// N x C x H x W  ->  (N H W) x C, rows ordered batch-major then row-major.
Tensor to_positions(const Tensor& z);
// Stride-1 box sum over kh x kw windows ("valid" extent).
Tensor window_sum(const Tensor& z, std::size_t kh, std::size_t kw);
// Row b of a becomes rows b*times .. b*times+times-1.
Tensor repeat_rows(const Tensor& a, std::size_t times);
// (B L) x K [x 1 x 1] source-major view features -> B x K x rows x cols grid.
Tensor views_to_grid(const Tensor& z, std::size_t views, std::size_t rows, std::size_t cols);
// Subtracts the column means of a P x K matrix.
Tensor center_rows(const Tensor& a);

// ---- arithmetic ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
// sum_i c_i a_i with c held constant.
Tensor frobenius_dot(const Tensor& a, std::span<const double> constant);

}  // namespace hfmca
