#include "hfmca/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "hfmca/errors.hpp"
#include "hfmca/linalg.hpp"

namespace hfmca {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
}

// Unfolds an N x C x H x W batch into (C kh kw) x (N Ho Wo) columns.
// Products run on Eigen-owned (aligned) buffers only: Eigen's vectorized
// paths pick their summation order from the pointer alignment, so mapping
// arbitrary heap memory would make results depend on the heap layout.
void im2col(const double* x, std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, RowMat& cols) {
    const std::size_t ho = h - kh + 1, wo = w - kw + 1, hw = ho * wo;
    cols.resize(static_cast<Eigen::Index>(c * kh * kw), static_cast<Eigen::Index>(n * hw));
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
                double* row = cols.data() + ((ch * kh + a) * kw + b) * n * hw;
                for (std::size_t img = 0; img < n; ++img)
                    for (std::size_t i = 0; i < ho; ++i) {
                        const double* src = x + ((img * c + ch) * h + i + a) * w + b;
                        double* dst = row + img * hw + i * wo;
                        for (std::size_t j = 0; j < wo; ++j) dst[j] = src[j];
                    }
            }
}

void col2im_add(const RowMat& cols, std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, std::span<double> x) {
    const std::size_t ho = h - kh + 1, wo = w - kw + 1, hw = ho * wo;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
                const double* row = cols.data() + ((ch * kh + a) * kw + b) * n * hw;
                for (std::size_t img = 0; img < n; ++img)
                    for (std::size_t i = 0; i < ho; ++i) {
                        double* dst = x.data() + ((img * c + ch) * h + i + a) * w + b;
                        const double* src = row + img * hw + i * wo;
                        for (std::size_t j = 0; j < wo; ++j) dst[j] += src[j];
                    }
            }
}

RowMat copy_rows(std::span<const double> v, std::size_t rows, std::size_t cols) {
    RowMat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    require_rank(input, 4, "conv2d");
    require_rank(kernel, 4, "conv2d");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != c)
        throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
    if (kh > h || kw > w)
        throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than input " +
                         shape_string(input.shape()));
    if (bias.defined() && bias.numel() != o) throw ShapeError("conv2d: bias length mismatch");

    const std::size_t ho = h - kh + 1, wo = w - kw + 1;
    const std::size_t ck = c * kh * kw, hw = ho * wo;

    RowMat cols;
    im2col(input.data().data(), n, c, h, w, kh, kw, cols);
    const RowMat y = copy_rows(kernel.data(), o, ck) * cols;
    std::vector<double> out(n * o * hw);
    for (std::size_t k = 0; k < o; ++k) {
        const double bk = bias.defined() ? bias.data()[k] : 0.0;
        const double* row = y.data() + k * n * hw;
        for (std::size_t b = 0; b < n; ++b) {
            double* dst = out.data() + (b * o + k) * hw;
            for (std::size_t p = 0; p < hw; ++p) dst[p] = row[b * hw + p] + bk;
        }
    }

    return detail::make_result(
        {n, o, ho, wo}, std::move(out), {input, kernel, bias},
        [=](std::span<const double> g) {
            auto gin = detail::grad_sink(input);
            auto gk = detail::grad_sink(kernel);
            auto gb = detail::grad_sink(bias);
            RowMat gy(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(n * hw));
            for (std::size_t k = 0; k < o; ++k)
                for (std::size_t b = 0; b < n; ++b)
                    std::copy_n(g.data() + (b * o + k) * hw, hw, gy.data() + k * n * hw + b * hw);
            if (!gb.empty())
                for (std::size_t k = 0; k < o; ++k) {
                    double acc = 0.0;
                    const double* row = gy.data() + k * n * hw;
                    for (std::size_t q = 0; q < n * hw; ++q) acc += row[q];
                    gb[k] += acc;
                }
            if (!gk.empty()) {
                RowMat xcols;
                im2col(input.data().data(), n, c, h, w, kh, kw, xcols);
                const RowMat dk = gy * xcols.transpose();
                for (std::size_t q = 0; q < o * ck; ++q) gk[q] += dk.data()[q];
            }
            if (!gin.empty()) {
                const RowMat gcols = copy_rows(kernel.data(), o, ck).transpose() * gy;
                col2im_add(gcols, n, c, h, w, kh, kw, gin);
            }
        });
}

Tensor pad2d(const Tensor& input, std::size_t pad) {
    require_rank(input, 4, "pad2d");
    if (pad == 0) return input;
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
    std::vector<double> out(n * c * hp * wp, 0.0);
    const auto x = input.data();
    for (std::size_t nc = 0; nc < n * c; ++nc)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out[(nc * hp + i + pad) * wp + j + pad] = x[(nc * h + i) * w + j];
    return detail::make_result({n, c, hp, wp}, std::move(out), {input},
                               [=](std::span<const double> g) {
                                   auto gin = detail::grad_sink(input);
                                   for (std::size_t nc = 0; nc < n * c; ++nc)
                                       for (std::size_t i = 0; i < h; ++i)
                                           for (std::size_t j = 0; j < w; ++j)
                                               gin[(nc * h + i) * w + j] +=
                                                   g[(nc * hp + i + pad) * wp + j + pad];
                               });
}

Tensor activation(const Tensor& input, Activation kind) {
    if (kind == Activation::none) return input;
    const auto x = input.data();
    std::vector<double> out(x.size());
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
        return detail::make_result(input.shape(), std::move(out), {input},
                                   [=](std::span<const double> g) {
                                       auto gin = detail::grad_sink(input);
                                       const auto xv = input.data();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           if (xv[i] > 0.0) gin[i] += g[i];
                                   });
    }
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    auto y = std::make_shared<std::vector<double>>(out);
    return detail::make_result(input.shape(), std::move(out), {input},
                               [=](std::span<const double> g) {
                                   auto gin = detail::grad_sink(input);
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       gin[i] += g[i] * (*y)[i] * (1.0 - (*y)[i]);
                               });
}

Tensor batchnorm2d(const Tensor& input, const Tensor& scale, const Tensor& shift,
                   BatchNormState& state, Mode mode) {
    require_rank(input, 4, "batchnorm2d");
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    if (state.running_mean.size() != c || state.running_var.size() != c)
        throw ShapeError("batchnorm2d: state has wrong channel count");
    if (scale.defined() && scale.numel() != c) throw ShapeError("batchnorm2d: scale length");
    if (shift.defined() && shift.numel() != c) throw ShapeError("batchnorm2d: shift length");
    if (mode == Mode::train && n < 2) throw ShapeError("batchnorm2d: train mode needs batch >= 2");

    const auto x = input.data();
    const double eps = state.epsilon;
    std::vector<double> out(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto invstd = std::make_shared<std::vector<double>>(c);
    const double m = static_cast<double>(n * hw);

    for (std::size_t ch = 0; ch < c; ++ch) {
        double mu, var;
        if (mode == Mode::train) {
            double s = 0.0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t p = 0; p < hw; ++p) s += x[(b * c + ch) * hw + p];
            mu = s / m;
            double v = 0.0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t p = 0; p < hw; ++p) {
                    const double d = x[(b * c + ch) * hw + p] - mu;
                    v += d * d;
                }
            var = v / m;
            state.running_mean[ch] = state.momentum * state.running_mean[ch] + (1.0 - state.momentum) * mu;
            state.running_var[ch] =
                state.momentum * state.running_var[ch] + (1.0 - state.momentum) * v / (m - 1.0);
        } else {
            mu = state.running_mean[ch];
            var = state.running_var[ch];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[ch] = is;
        const double gamma = scale.defined() ? scale.data()[ch] : 1.0;
        const double beta = shift.defined() ? shift.data()[ch] : 0.0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t idx = (b * c + ch) * hw + p;
                const double xh = (x[idx] - mu) * is;
                (*xhat)[idx] = xh;
                out[idx] = gamma * xh + beta;
            }
    }

    const bool train = mode == Mode::train;
    return detail::make_result(
        input.shape(), std::move(out), {input, scale, shift}, [=](std::span<const double> g) {
            auto gin = detail::grad_sink(input);
            auto gs = detail::grad_sink(scale);
            auto gb = detail::grad_sink(shift);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double gamma = scale.defined() ? scale.data()[ch] : 1.0;
                double sg = 0.0, sgx = 0.0;
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t p = 0; p < hw; ++p) {
                        const std::size_t idx = (b * c + ch) * hw + p;
                        sg += g[idx];
                        sgx += g[idx] * (*xhat)[idx];
                    }
                if (!gs.empty()) gs[ch] += sgx;
                if (!gb.empty()) gb[ch] += sg;
                if (gin.empty()) continue;
                const double is = (*invstd)[ch];
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t p = 0; p < hw; ++p) {
                        const std::size_t idx = (b * c + ch) * hw + p;
                        if (train)
                            gin[idx] += gamma * is * (g[idx] - sg / m - (*xhat)[idx] * sgx / m);
                        else
                            gin[idx] += gamma * is * g[idx];
                    }
            }
        });
}

Tensor avgpool2d(const Tensor& input, std::size_t k) { return avgpool2d(input, k, k); }

Tensor avgpool2d(const Tensor& input, std::size_t kh, std::size_t kw) {
    require_rank(input, 4, "avgpool2d");
    if (kh == 0 || kw == 0) throw ShapeError("avgpool2d: zero window");
    if (kh == 1 && kw == 1) return input;
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % kh != 0 || w % kw != 0)
        throw ShapeError("avgpool2d: dims " + shape_string(input.shape()) +
                         " not divisible by window " + std::to_string(kh) + "x" +
                         std::to_string(kw));
    const std::size_t ho = h / kh, wo = w / kw;
    const double inv = 1.0 / static_cast<double>(kh * kw);
    const auto x = input.data();
    std::vector<double> out(n * c * ho * wo, 0.0);
    for (std::size_t nc = 0; nc < n * c; ++nc)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                double s = 0.0;
                for (std::size_t a = 0; a < kh; ++a)
                    for (std::size_t b = 0; b < kw; ++b) s += x[(nc * h + i * kh + a) * w + j * kw + b];
                out[(nc * ho + i) * wo + j] = s * inv;
            }
    return detail::make_result({n, c, ho, wo}, std::move(out), {input},
                               [=](std::span<const double> g) {
                                   auto gin = detail::grad_sink(input);
                                   for (std::size_t nc = 0; nc < n * c; ++nc)
                                       for (std::size_t i = 0; i < h; ++i)
                                           for (std::size_t j = 0; j < w; ++j)
                                               gin[(nc * h + i) * w + j] +=
                                                   g[(nc * ho + i / kh) * wo + j / kw] * inv;
                               });
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
    if (inputs.size() == 1) return inputs.front();
    for (const Tensor& t : inputs) require_rank(t, 4, "concat_channels");
    const std::size_t n = inputs[0].dim(0), h = inputs[0].dim(2), w = inputs[0].dim(3);
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const Tensor& t : inputs) {
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
            throw ShapeError("concat_channels: " + shape_string(t.shape()) + " does not match " +
                             shape_string(inputs[0].shape()));
        offsets.push_back(total);
        total += t.dim(1);
    }
    const std::size_t hw = h * w;
    std::vector<double> out(n * total * hw);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto x = inputs[k].data();
        const std::size_t ck = inputs[k].dim(1);
        for (std::size_t b = 0; b < n; ++b)
            std::copy_n(x.data() + b * ck * hw, ck * hw, out.data() + (b * total + offsets[k]) * hw);
    }
    return detail::make_result({n, total, h, w}, std::move(out), inputs,
                               [=](std::span<const double> g) {
                                   for (std::size_t k = 0; k < inputs.size(); ++k) {
                                       auto gin = detail::grad_sink(inputs[k]);
                                       if (gin.empty()) continue;
                                       const std::size_t ck = inputs[k].dim(1);
                                       for (std::size_t b = 0; b < n; ++b)
                                           for (std::size_t i = 0; i < ck * hw; ++i)
                                               gin[b * ck * hw + i] +=
                                                   g[(b * total + offsets[k]) * hw + i];
                                   }
                               });
}

Tensor append_noise(const Tensor& input, std::size_t n_noise, Rng& rng) {
    require_rank(input, 4, "append_noise");
    if (n_noise == 0) return input;
    const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
    std::vector<double> noise(n * n_noise * h * w);
    for (double& v : noise) v = rng.uniform();
    return concat_channels({input, Tensor::from({n, n_noise, h, w}, std::move(noise))});
}

Tensor outer_stats(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "outer_stats");
    require_rank(b, 2, "outer_stats");
    const std::size_t p = a.dim(0);
    if (b.dim(0) != p) throw ShapeError("outer_stats: position counts differ");
    if (p == 0) throw ShapeError("outer_stats: empty position set");
    const std::vector<double> w(p, 1.0);
    return weighted_outer(a, b, w, static_cast<double>(p));
}

Tensor weighted_outer(const Tensor& a, const Tensor& b, std::span<const double> weights,
                      double divisor) {
    require_rank(a, 2, "weighted_outer");
    require_rank(b, 2, "weighted_outer");
    const std::size_t p = a.dim(0), ka = a.dim(1), kb = b.dim(1);
    if (b.dim(0) != p || weights.size() != p)
        throw ShapeError("weighted_outer: position counts differ");
    if (p == 0) throw ShapeError("weighted_outer: empty position set");
    if (!(divisor > 0.0)) throw std::invalid_argument("weighted_outer: divisor must be positive");
    const double inv = 1.0 / divisor;
    RowMat aw = copy_rows(a.data(), p, ka);
    for (std::size_t r = 0; r < p; ++r) aw.row(static_cast<Eigen::Index>(r)) *= weights[r] * inv;
    const RowMat bm = copy_rows(b.data(), p, kb);
    const RowMat prod = aw.transpose() * bm;
    std::vector<double> out(prod.data(), prod.data() + ka * kb);
    std::vector<double> wcopy(weights.begin(), weights.end());
    return detail::make_result(
        {ka, kb}, std::move(out), {a, b}, [=, wcopy = std::move(wcopy)](std::span<const double> g) {
            auto ga = detail::grad_sink(a);
            auto gb = detail::grad_sink(b);
            const RowMat gm = copy_rows(g, ka, kb);
            if (!ga.empty()) {
                RowMat d = copy_rows(b.data(), p, kb) * gm.transpose();
                for (std::size_t r = 0; r < p; ++r)
                    for (std::size_t i = 0; i < ka; ++i) ga[r * ka + i] += wcopy[r] * inv * d(r, i);
            }
            if (!gb.empty()) {
                RowMat d = copy_rows(a.data(), p, ka) * gm;
                for (std::size_t r = 0; r < p; ++r)
                    for (std::size_t j = 0; j < kb; ++j) gb[r * kb + j] += wcopy[r] * inv * d(r, j);
            }
        });
}

Tensor logdet(const Tensor& m, double ridge) {
    require_rank(m, 2, "logdet");
    const std::size_t k = m.dim(0);
    if (m.dim(1) != k) throw ShapeError("logdet: matrix must be square");
    const Matrix mat(k, k, std::vector<double>(m.data().begin(), m.data().end()));
    const SymMatrix sym(mat);
    const double value = cholesky_logdet(sym, ridge);
    return detail::make_result({}, {value}, {m}, [=](std::span<const double> g) {
        auto gm = detail::grad_sink(m);
        const SymMatrix inv = ridge_inverse(sym, ridge);
        const auto iv = inv.matrix().values();
        for (std::size_t i = 0; i < k * k; ++i) gm[i] += g[0] * iv[i];
    });
}

Tensor assemble_joint(const Tensor& r_phi, const Tensor& p_cross, const Tensor& r_psi) {
    require_rank(r_phi, 2, "assemble_joint");
    require_rank(p_cross, 2, "assemble_joint");
    require_rank(r_psi, 2, "assemble_joint");
    const std::size_t a = r_phi.dim(0), b = r_psi.dim(0);
    if (r_phi.dim(1) != a || r_psi.dim(1) != b || p_cross.dim(0) != a || p_cross.dim(1) != b)
        throw ShapeError("assemble_joint: block dims do not fit");
    const std::size_t n = a + b;
    std::vector<double> out(n * n);
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < a; ++j) out[i * n + j] = r_phi.data()[i * a + j];
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) out[(a + i) * n + a + j] = r_psi.data()[i * b + j];
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j) {
            out[i * n + a + j] = p_cross.data()[i * b + j];
            out[(a + j) * n + i] = p_cross.data()[i * b + j];
        }
    return detail::make_result({n, n}, std::move(out), {r_phi, p_cross, r_psi},
                               [=](std::span<const double> g) {
                                   auto g1 = detail::grad_sink(r_phi);
                                   auto gp = detail::grad_sink(p_cross);
                                   auto g2 = detail::grad_sink(r_psi);
                                   if (!g1.empty())
                                       for (std::size_t i = 0; i < a; ++i)
                                           for (std::size_t j = 0; j < a; ++j)
                                               g1[i * a + j] += g[i * n + j];
                                   if (!g2.empty())
                                       for (std::size_t i = 0; i < b; ++i)
                                           for (std::size_t j = 0; j < b; ++j)
                                               g2[i * b + j] += g[(a + i) * n + a + j];
                                   if (!gp.empty())
                                       for (std::size_t i = 0; i < a; ++i)
                                           for (std::size_t j = 0; j < b; ++j)
                                               gp[i * b + j] +=
                                                   g[i * n + a + j] + g[(a + j) * n + i];
                               });
}

Tensor reshape(const Tensor& input, Shape shape) {
    if (shape_numel(shape) != input.numel())
        throw ShapeError("reshape: " + shape_string(input.shape()) + " -> " + shape_string(shape));
    std::vector<double> out(input.data().begin(), input.data().end());
    return detail::make_result(std::move(shape), std::move(out), {input},
                               [=](std::span<const double> g) {
                                   auto gin = detail::grad_sink(input);
                                   for (std::size_t i = 0; i < g.size(); ++i) gin[i] += g[i];
                               });
}

Tensor to_positions(const Tensor& z) {
    require_rank(z, 4, "to_positions");
    const std::size_t n = z.dim(0), c = z.dim(1), hw = z.dim(2) * z.dim(3);
    const auto x = z.data();
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) out[(b * hw + p) * c + ch] = x[(b * c + ch) * hw + p];
    return detail::make_result({n * hw, c}, std::move(out), {z}, [=](std::span<const double> g) {
        auto gin = detail::grad_sink(z);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < hw; ++p)
                    gin[(b * c + ch) * hw + p] += g[(b * hw + p) * c + ch];
    });
}

Tensor window_sum(const Tensor& z, std::size_t kh, std::size_t kw) {
    require_rank(z, 4, "window_sum");
    const std::size_t n = z.dim(0), c = z.dim(1), h = z.dim(2), w = z.dim(3);
    if (kh == 0 || kw == 0 || kh > h || kw > w) throw ShapeError("window_sum: bad window");
    if (kh == 1 && kw == 1) return z;
    const std::size_t ho = h - kh + 1, wo = w - kw + 1;
    const auto x = z.data();
    std::vector<double> out(n * c * ho * wo, 0.0);
    for (std::size_t nc = 0; nc < n * c; ++nc)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                double s = 0.0;
                for (std::size_t a = 0; a < kh; ++a)
                    for (std::size_t b = 0; b < kw; ++b) s += x[(nc * h + i + a) * w + j + b];
                out[(nc * ho + i) * wo + j] = s;
            }
    return detail::make_result({n, c, ho, wo}, std::move(out), {z}, [=](std::span<const double> g) {
        auto gin = detail::grad_sink(z);
        for (std::size_t nc = 0; nc < n * c; ++nc)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const double gv = g[(nc * ho + i) * wo + j];
                    for (std::size_t a = 0; a < kh; ++a)
                        for (std::size_t b = 0; b < kw; ++b) gin[(nc * h + i + a) * w + j + b] += gv;
                }
    });
}

Tensor repeat_rows(const Tensor& a, std::size_t times) {
    require_rank(a, 2, "repeat_rows");
    if (times == 0) throw ShapeError("repeat_rows: times must be positive");
    if (times == 1) return a;
    const std::size_t r = a.dim(0), k = a.dim(1);
    const auto x = a.data();
    std::vector<double> out(r * times * k);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t t = 0; t < times; ++t)
            std::copy_n(x.data() + i * k, k, out.data() + (i * times + t) * k);
    return detail::make_result({r * times, k}, std::move(out), {a}, [=](std::span<const double> g) {
        auto gin = detail::grad_sink(a);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t t = 0; t < times; ++t)
                for (std::size_t j = 0; j < k; ++j) gin[i * k + j] += g[(i * times + t) * k + j];
    });
}

Tensor views_to_grid(const Tensor& z, std::size_t views, std::size_t rows, std::size_t cols) {
    if (rows * cols != views) throw ShapeError("views_to_grid: grid does not hold every view");
    if (z.rank() != 2 && !(z.rank() == 4 && z.dim(2) == 1 && z.dim(3) == 1))
        throw ShapeError("views_to_grid: expected (B L) x K features, got " + shape_string(z.shape()));
    const std::size_t total = z.dim(0), k = z.dim(1);
    if (views == 0 || total % views != 0) throw ShapeError("views_to_grid: rows not divisible by views");
    const std::size_t b = total / views;
    const auto x = z.data();
    std::vector<double> out(b * k * views);
    for (std::size_t s = 0; s < b; ++s)
        for (std::size_t l = 0; l < views; ++l)
            for (std::size_t ch = 0; ch < k; ++ch) out[(s * k + ch) * views + l] = x[(s * views + l) * k + ch];
    return detail::make_result({b, k, rows, cols}, std::move(out), {z}, [=](std::span<const double> g) {
        auto gin = detail::grad_sink(z);
        for (std::size_t s = 0; s < b; ++s)
            for (std::size_t l = 0; l < views; ++l)
                for (std::size_t ch = 0; ch < k; ++ch)
                    gin[(s * views + l) * k + ch] += g[(s * k + ch) * views + l];
    });
}

Tensor center_rows(const Tensor& a) {
    require_rank(a, 2, "center_rows");
    const std::size_t r = a.dim(0), k = a.dim(1);
    if (r == 0) throw ShapeError("center_rows: empty input");
    const auto x = a.data();
    std::vector<double> mu(k, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < k; ++j) mu[j] += x[i * k + j];
    for (double& m : mu) m /= static_cast<double>(r);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x[i * k + j] - mu[j];
    return detail::make_result({r, k}, std::move(out), {a}, [=](std::span<const double> g) {
        auto gin = detail::grad_sink(a);
        std::vector<double> gm(k, 0.0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < k; ++j) gm[j] += g[i * k + j];
        for (double& v : gm) v /= static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < k; ++j) gin[i * k + j] += g[i * k + j] - gm[j];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [=](std::span<const double> g) {
        auto ga = detail::grad_sink(a);
        if (!ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        auto gb = detail::grad_sink(b);
        if (!gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [=](std::span<const double> g) {
        auto ga = detail::grad_sink(a);
        if (!ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        auto gb = detail::grad_sink(b);
        if (!gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [=](std::span<const double> g) {
        auto ga = detail::grad_sink(a);
        if (!ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
        auto gb = detail::grad_sink(b);
        if (!gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    return detail::make_result(a.shape(), std::move(out), {a}, [=](std::span<const double> g) {
        auto ga = detail::grad_sink(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_result({}, {s}, {a}, [=](std::span<const double> g) {
        auto ga = detail::grad_sink(a);
        for (double& v : ga) v += g[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw ShapeError("dot: element counts differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
    return detail::make_result({}, {s}, {a, b}, [=](std::span<const double> g) {
        auto ga = detail::grad_sink(a);
        if (!ga.empty())
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * b.data()[i];
        auto gb = detail::grad_sink(b);
        if (!gb.empty())
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * a.data()[i];
    });
}

Tensor frobenius_dot(const Tensor& a, std::span<const double> constant) {
    if (a.numel() != constant.size()) throw ShapeError("frobenius_dot: element counts differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * constant[i];
    std::vector<double> c(constant.begin(), constant.end());
    return detail::make_result({}, {s}, {a}, [=, c = std::move(c)](std::span<const double> g) {
        auto ga = detail::grad_sink(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * c[i];
    });
}

}  // namespace hfmca
