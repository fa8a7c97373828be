#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "hfmca/costs.hpp"
#include "hfmca/hierarchy.hpp"
#include "hfmca/network.hpp"
#include "hfmca/oracle.hpp"
#include "hfmca/spectrum.hpp"

namespace hfmca {

enum class TrainMode { self_supervised, supervised, unsupervised, pairwise };

struct OptimizerSpec {
    enum class Kind { sgd, adam };
    Kind kind = Kind::sgd;
    double lr = 0.06;
    double momentum = 0.9;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double epsilon = 1e-8;
};

struct TrainConfig {
    TrainMode mode = TrainMode::self_supervised;
    bool use_internal = true;
    bool use_external = true;
    std::size_t views = 4;
    double ridge = 0.1;
    double beta = 0.0;
    double internal_weight = 1.0;
    OptimizerSpec optimizer;
    std::size_t batch = 32;
    std::size_t steps = 500;
    std::uint64_t seed = 0;
    AugmentProtocol augment;
    // Subtract batch means from the external / pairwise features before the
    // statistics, removing the constant component from the spectrum.
    bool center = false;
    std::size_t spectrum_every = 0;  // 0: no snapshots

    // Unsupervised mode switches the external cost off.
    void normalize();
    void validate() const;
};

// SGD with momentum (v <- mu v + g, p <- p - lr v) or Adam.
class Optimizer {
public:
    Optimizer(OptimizerSpec spec, const std::vector<NamedTensor>& params);

    // Applies one update from the accumulated gradients and clears them.
    void step();
    std::uint64_t steps() const { return steps_; }

    std::vector<NamedTensor> state() const;
    void load_state(const std::vector<NamedTensor>& state, std::uint64_t steps);

private:
    OptimizerSpec spec_;
    std::vector<NamedTensor> params_;
    std::vector<std::vector<double>> first_;   // velocity or Adam m
    std::vector<std::vector<double>> second_;  // Adam v
    std::uint64_t steps_ = 0;
};

// Statistics of one forward pass through the hierarchy.
struct PassStats {
    ForwardResult forward;
    Tensor group;                       // head output, B x K
    std::vector<std::size_t> layers;    // layer id of every entry in `stats`
    std::vector<CorrTensors> stats;
    std::size_t external_index = SIZE_MAX;  // position of the external term in `stats`
};

// Views are (B L) images, group-major. External term needs a head.
PassStats hierarchy_pass(Network& net, const Tensor& views_batch, std::size_t views, Mode mode,
                         std::uint64_t noise_seed, bool use_internal, bool use_external, bool center);

// f on x, partner g on y, paired by row.
PassStats pairwise_pass(Network& net, const Tensor& x, const Tensor& y, Mode mode,
                        std::uint64_t noise_seed, bool center);

struct DataSource {
    const LabeledDataset* images = nullptr;
    const JointTable* joint = nullptr;
};

struct StepRecord {
    std::uint64_t step = 0;
    std::optional<double> external;
    std::vector<double> internal;  // internal[b - 1] for pair b
    double total = 0.0;
    double grad_norm = 0.0;
    std::optional<double> r1_min_eig;  // smallest eigenvalue of the view-side ACF
    // Bias-corrected spectra at snapshot steps: (layer, sigma).
    std::vector<std::pair<std::size_t, std::vector<double>>> spectra;
};

class Trainer {
public:
    Trainer(TrainConfig config, NetworkSpec spec, DataSource data);

    const TrainConfig& config() const { return config_; }
    Network& network() { return net_; }
    const Network& network() const { return net_; }
    AcfFilterBank& bank() { return bank_; }
    const AcfFilterBank& bank() const { return bank_; }
    Optimizer& optimizer() { return opt_; }
    const Optimizer& optimizer() const { return opt_; }
    std::uint64_t step_index() const { return step_; }
    void set_step_index(std::uint64_t s) { step_ = s; }

    std::size_t internal_pairs() const;
    std::size_t external_layer() const { return net_.spec().blocks.size(); }

    StepRecord step();
    std::vector<StepRecord> run(std::size_t steps, const std::function<void(const StepRecord&)>& on_step = {});

    // Source indices of the batch used at `step`.
    std::vector<std::size_t> batch_indices(std::uint64_t step) const;

private:
    TrainConfig config_;
    DataSource data_;
    Network net_;
    AcfFilterBank bank_;
    Optimizer opt_;
    std::uint64_t step_ = 0;
};

// Population statistics of f(X), g(Y) under the joint table, computed
// exactly by enumerating the alphabets (eval mode).
CorrStats joint_population_stats(Network& net, const JointTable& joint, bool center);

struct LayerStats {
    std::size_t layer = 0;
    CorrStats stats;
};

// Eval-mode statistics of every layer pair on a fixed batch of `batch`
// sources drawn from the config seed's spectrum stream.
std::vector<LayerStats> evaluation_stats(Network& net, const TrainConfig& config, const DataSource& data,
                                         std::size_t batch);

// Groups for `indices` following the mode's sampling rule.
std::vector<ViewGroup> make_groups(const LabeledDataset& data, std::span<const std::size_t> indices,
                                   const TrainConfig& config, std::uint64_t step);

}  // namespace hfmca
