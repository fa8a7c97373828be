#include "hfmca/trainer.hpp"

#include <cmath>
#include <numeric>

#include "hfmca/errors.hpp"
#include "hfmca/rng.hpp"

namespace hfmca {

void TrainConfig::normalize() {
    if (mode == TrainMode::unsupervised) use_external = false;
    if (mode == TrainMode::pairwise) {
        use_internal = false;
        use_external = true;
    }
}

void TrainConfig::validate() const {
    if (!use_internal && !use_external) throw ConfigError("train: enable internal or external costs");
    if (mode == TrainMode::unsupervised && use_external)
        throw ConfigError("train: unsupervised mode uses internal costs only");
    if (views == 0) throw ConfigError("train: views must be >= 1");
    if (!(ridge >= 0.0)) throw ConfigError("train: ridge must be non-negative");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("train: beta must lie in [0, 1)");
    if (!(internal_weight >= 0.0)) throw ConfigError("train: internal_weight must be non-negative");
    if (batch < 2) throw ConfigError("train: batch must be >= 2 (batch norm statistics)");
    if (!(optimizer.lr >= 0.0)) throw ConfigError("train: learning rate must be non-negative");
    if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
        throw ConfigError("train: Adam betas must lie in [0, 1)");
    augment.validate();
}

Optimizer::Optimizer(OptimizerSpec spec, const std::vector<NamedTensor>& params)
    : spec_(spec), params_(params) {
    for (const auto& p : params_) {
        first_.emplace_back(p.tensor.numel(), 0.0);
        second_.emplace_back(spec_.kind == OptimizerSpec::Kind::adam ? p.tensor.numel() : 0, 0.0);
    }
}

void Optimizer::step() {
    ++steps_;
    const double t = static_cast<double>(steps_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor p = params_[i].tensor;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = first_[i];
        auto gv = [&](std::size_t k) { return g.empty() ? 0.0 : g[k]; };
        if (spec_.kind == OptimizerSpec::Kind::sgd) {
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[k] = spec_.momentum * m[k] + gv(k);
                w[k] -= spec_.lr * m[k];
            }
        } else {
            auto& v = second_[i];
            const double c1 = 1.0 - std::pow(spec_.beta1, t);
            const double c2 = 1.0 - std::pow(spec_.beta2, t);
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double gk = gv(k);
                m[k] = spec_.beta1 * m[k] + (1.0 - spec_.beta1) * gk;
                v[k] = spec_.beta2 * v[k] + (1.0 - spec_.beta2) * gk * gk;
                w[k] -= spec_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + spec_.epsilon);
            }
        }
        p.zero_grad();
    }
}

std::vector<NamedTensor> Optimizer::state() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Shape& shape = params_[i].tensor.shape();
        out.push_back({params_[i].name + ".m", Tensor::from(shape, first_[i])});
        if (spec_.kind == OptimizerSpec::Kind::adam)
            out.push_back({params_[i].name + ".v", Tensor::from(shape, second_[i])});
    }
    return out;
}

void Optimizer::load_state(const std::vector<NamedTensor>& state, std::uint64_t steps) {
    std::size_t idx = 0;
    auto take = [&](const std::string& name, std::vector<double>& dst) {
        if (idx >= state.size() || state[idx].name != name || state[idx].tensor.numel() != dst.size())
            throw ShapeError("optimizer: state entry '" + name + "' missing or mismatched");
        dst.assign(state[idx].tensor.data().begin(), state[idx].tensor.data().end());
        ++idx;
    };
    for (std::size_t i = 0; i < params_.size(); ++i) {
        take(params_[i].name + ".m", first_[i]);
        if (spec_.kind == OptimizerSpec::Kind::adam) take(params_[i].name + ".v", second_[i]);
    }
    if (idx != state.size()) throw ShapeError("optimizer: unexpected extra state");
    steps_ = steps;
}

namespace {

std::pair<std::size_t, std::size_t> window_of(const Tensor& lower, const Tensor& upper) {
    return {lower.dim(2) - upper.dim(2) + 1, lower.dim(3) - upper.dim(3) + 1};
}

}  // namespace

PassStats hierarchy_pass(Network& net, const Tensor& views_batch, std::size_t views, Mode mode,
                         std::uint64_t noise_seed, bool use_internal, bool use_external, bool center) {
    PassStats ps;
    ps.forward = net.forward_all(views_batch, mode, noise_seed);
    const std::size_t blocks = ps.forward.outputs.size();
    if (use_internal) {
        if (blocks < 2) throw ConfigError("internal costs need at least two blocks");
        for (std::size_t b = 1; b < blocks; ++b) {
            const Tensor& lower = ps.forward.lowers[b];
            const Tensor& upper = ps.forward.outputs[b];
            const auto [wh, ww] = window_of(lower, upper);
            ps.layers.push_back(b);
            ps.stats.push_back(stats_internal(lower, upper, wh, ww));
        }
    }
    if (use_external) {
        Tensor z1 = ps.forward.features;
        ps.group = net.forward_head(z1, mode, noise_seed);
        Tensor z2 = ps.group;
        if (center) {
            z1 = center_rows(z1);
            z2 = center_rows(z2);
        }
        ps.external_index = ps.stats.size();
        ps.layers.push_back(blocks);
        ps.stats.push_back(stats_external(z1, z2, views));
    }
    return ps;
}

PassStats pairwise_pass(Network& net, const Tensor& x, const Tensor& y, Mode mode,
                        std::uint64_t noise_seed, bool center) {
    PassStats ps;
    ps.forward = net.forward_all(x, mode, noise_seed);
    Tensor f = ps.forward.features;
    Tensor g = net.forward_partner(y, mode, noise_seed);
    if (f.dim(0) != g.dim(0)) throw ShapeError("pairwise: x and y give different position counts");
    ps.group = g;
    if (center) {
        f = center_rows(f);
        g = center_rows(g);
    }
    ps.external_index = 0;
    ps.layers.push_back(ps.forward.outputs.size());
    ps.stats.push_back(stats_pairwise(f, g));
    return ps;
}

std::vector<ViewGroup> make_groups(const LabeledDataset& data, std::span<const std::size_t> indices,
                                   const TrainConfig& config, std::uint64_t step) {
    std::vector<ViewGroup> groups;
    for (std::size_t idx : indices) {
        switch (config.mode) {
            case TrainMode::supervised:
                groups.push_back(sample_same_class(data, idx, config.views, config.seed, step));
                break;
            case TrainMode::unsupervised:
                groups.push_back(sample_views(data.image(idx), data.dims, config.augment, 1, config.seed, idx, step));
                break;
            default:
                groups.push_back(
                    sample_views(data.image(idx), data.dims, config.augment, config.views, config.seed, idx, step));
        }
    }
    return groups;
}

CorrStats joint_population_stats(Network& net, const JointTable& joint, bool center) {
    std::vector<std::size_t> xs(joint.n()), ys(joint.m());
    std::iota(xs.begin(), xs.end(), 0);
    std::iota(ys.begin(), ys.end(), 0);
    const std::uint64_t noise_seed = derive_seed(0, "noise", 0);
    const Tensor f = net.forward_all(onehot_embed(xs, joint.n()), Mode::eval, noise_seed).features;
    const Tensor g = net.forward_partner(onehot_embed(ys, joint.m()), Mode::eval, noise_seed);
    const std::size_t k = f.dim(1), kg = g.dim(1);
    Matrix fm(joint.n(), k, std::vector<double>(f.data().begin(), f.data().end()));
    Matrix gm(joint.m(), kg, std::vector<double>(g.data().begin(), g.data().end()));
    if (center) {
        for (std::size_t c = 0; c < k; ++c) {
            double mu = 0.0;
            for (std::size_t x = 0; x < joint.n(); ++x) mu += joint.px()[x] * fm(x, c);
            for (std::size_t x = 0; x < joint.n(); ++x) fm(x, c) -= mu;
        }
        for (std::size_t c = 0; c < kg; ++c) {
            double mu = 0.0;
            for (std::size_t y = 0; y < joint.m(); ++y) mu += joint.py()[y] * gm(y, c);
            for (std::size_t y = 0; y < joint.m(); ++y) gm(y, c) -= mu;
        }
    }
    Matrix rf(k, k), rg(kg, kg), p(k, kg);
    for (std::size_t x = 0; x < joint.n(); ++x)
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) rf(a, b) += joint.px()[x] * fm(x, a) * fm(x, b);
    for (std::size_t y = 0; y < joint.m(); ++y)
        for (std::size_t a = 0; a < kg; ++a)
            for (std::size_t b = 0; b < kg; ++b) rg(a, b) += joint.py()[y] * gm(y, a) * gm(y, b);
    for (std::size_t x = 0; x < joint.n(); ++x)
        for (std::size_t y = 0; y < joint.m(); ++y)
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < kg; ++b) p(a, b) += joint(x, y) * fm(x, a) * gm(y, b);
    CorrStats s;
    s.r_phi = rf;
    s.r_psi = rg;
    s.p_cross = p;
    s.m_phi = joint.n();
    s.m_psi = joint.m();
    return s;
}

std::vector<LayerStats> evaluation_stats(Network& net, const TrainConfig& config, const DataSource& data,
                                         std::size_t batch) {
    std::vector<LayerStats> out;
    if (config.mode == TrainMode::pairwise) {
        if (!data.joint) throw ConfigError("spectrum: pairwise mode needs a joint table");
        out.push_back({net.spec().blocks.size(), joint_population_stats(net, *data.joint, config.center)});
        return out;
    }
    if (!data.images) throw ConfigError("spectrum: no image dataset");
    TrainConfig c = config;
    c.seed = derive_seed(config.seed, "spectrum");
    const std::size_t n = data.images->size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(c.seed);
    const std::size_t b = std::min(batch, n);
    for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(b);
    const auto groups = make_groups(*data.images, idx, c, 0);
    const std::size_t views = c.mode == TrainMode::unsupervised ? 1 : c.views;
    const bool internal = net.spec().blocks.size() > 1;
    const bool external = net.spec().head.has_value() && c.mode != TrainMode::unsupervised;
    const PassStats ps = hierarchy_pass(net, view_batch(groups), views, Mode::eval, derive_seed(c.seed, "noise"),
                                        internal, external, c.center);
    for (std::size_t i = 0; i < ps.stats.size(); ++i) out.push_back({ps.layers[i], ps.stats[i].values()});
    return out;
}

namespace {

TrainConfig prepared(TrainConfig c) {
    c.normalize();
    c.validate();
    return c;
}

}  // namespace

Trainer::Trainer(TrainConfig config, NetworkSpec spec, DataSource data)
    : config_(prepared(std::move(config))),
      data_(data),
      net_(std::move(spec), derive_seed(config_.seed, "init")),
      bank_(config_.beta),
      opt_(config_.optimizer, net_.parameters()) {
    if (config_.mode == TrainMode::pairwise) {
        if (!data_.joint) throw ConfigError("pairwise training needs a joint table");
        if (net_.spec().partner.empty()) throw ConfigError("pairwise training needs a partner network");
    } else {
        if (!data_.images) throw ConfigError("training needs an image dataset");
        if (config_.batch > data_.images->size()) throw ConfigError("train: batch larger than the dataset");
        if (config_.use_external && !net_.spec().head) throw ConfigError("external cost needs a head");
        if (config_.use_external && config_.mode != TrainMode::unsupervised && net_.spec().views != config_.views)
            throw ConfigError("train: network head is built for " + std::to_string(net_.spec().views) +
                              " views, config asks for " + std::to_string(config_.views));
        if (config_.use_internal && net_.spec().blocks.size() < 2)
            throw ConfigError("internal costs need at least two blocks");
    }
}

std::size_t Trainer::internal_pairs() const {
    return config_.use_internal ? net_.spec().blocks.size() - 1 : 0;
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
    const std::size_t n = data_.images ? data_.images->size() : 0;
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    Rng rng(derive_seed(config_.seed, "batch", step));
    const std::size_t b = std::min(config_.batch, n);
    for (std::size_t i = 0; i < b; ++i) std::swap(all[i], all[i + rng.below(n - i)]);
    all.resize(b);
    return all;
}

StepRecord Trainer::step() {
    StepRecord rec;
    rec.step = step_;
    const std::uint64_t noise_seed = derive_seed(config_.seed, "noise", step_);

    Tape tape;
    Tape::Scope scope(tape);
    PassStats ps;
    if (config_.mode == TrainMode::pairwise) {
        const auto pairs = sample_pairs(*data_.joint, config_.batch, derive_seed(config_.seed, "data", step_));
        std::vector<std::size_t> xs, ys;
        for (const auto& [x, y] : pairs) {
            xs.push_back(x);
            ys.push_back(y);
        }
        ps = pairwise_pass(net_, onehot_embed(xs, data_.joint->n()), onehot_embed(ys, data_.joint->m()),
                           Mode::train, noise_seed, config_.center);
    } else {
        const auto idx = batch_indices(step_);
        const auto groups = make_groups(*data_.images, idx, config_, step_);
        const std::size_t views = config_.mode == TrainMode::unsupervised ? 1 : config_.views;
        ps = hierarchy_pass(net_, view_batch(groups), views, Mode::train, noise_seed, config_.use_internal,
                            config_.use_external, config_.center);
    }

    const bool snapshot = config_.spectrum_every > 0 && step_ % config_.spectrum_every == 0;
    Tensor loss;
    rec.internal.assign(internal_pairs(), 0.0);
    for (std::size_t i = 0; i < ps.stats.size(); ++i) {
        const CorrStats values = ps.stats[i].values();
        const double cost = logdet_cost(values, config_.ridge);
        if (!std::isfinite(cost)) throw NumericalError("train: non-finite cost at step " + std::to_string(step_));
        const CorrStats estimate = bank_.update(ps.layers[i], values);
        const Tensor sur = surrogate_cost(ps.stats[i], make_preconditioner(estimate, config_.ridge));
        const bool external = i == ps.external_index;
        const double weight = external ? 1.0 : config_.internal_weight;
        const Tensor term = weight == 1.0 ? sur : scale(sur, weight);
        loss = loss.defined() ? add(loss, term) : term;
        if (external) {
            rec.external = cost;
            rec.r1_min_eig = min_eigenvalue(values.r_phi);
        } else {
            rec.internal[ps.layers[i] - 1] = cost;
        }
        rec.total += weight * cost;
        if (snapshot) rec.spectra.emplace_back(ps.layers[i], extract_spectrum(estimate, config_.ridge).sigma);
    }

    if (loss.requires_grad()) tape.backward(loss);
    double gn = 0.0;
    for (const auto& p : net_.parameters())
        for (double g : p.tensor.grad()) gn += g * g;
    rec.grad_norm = std::sqrt(gn);
    opt_.step();
    ++step_;
    return rec;
}

std::vector<StepRecord> Trainer::run(std::size_t steps, const std::function<void(const StepRecord&)>& on_step) {
    std::vector<StepRecord> log;
    for (std::size_t i = 0; i < steps; ++i) {
        log.push_back(step());
        if (on_step) on_step(log.back());
    }
    return log;
}

}  // namespace hfmca
