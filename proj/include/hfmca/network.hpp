#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hfmca/ops.hpp"
#include "hfmca/tensor.hpp"

namespace hfmca {

struct ConvLayerSpec {
    std::size_t kernel = 1;
    std::size_t out_channels = 0;
    bool norm = true;
    Activation act = Activation::relu;

    bool operator==(const ConvLayerSpec&) const = default;
};

struct BlockSpec {
    std::size_t n_noise = 0;
    std::size_t pre_pad = 0;
    std::vector<ConvLayerSpec> layers;
    std::size_t post_pool = 1;  // applied to the block output before the next block reads it
    bool global_pool = false;   // block output is averaged to 1x1

    std::size_t window() const;  // composed stride-1 kernel extent
    std::size_t out_channels() const;

    bool operator==(const BlockSpec&) const = default;
};

enum class HeadLayout { grid, channels };

struct NetworkSpec {
    std::size_t input_channels = 3;
    std::vector<BlockSpec> blocks;
    // External head over L view features of one source.
    std::optional<BlockSpec> head;
    HeadLayout head_layout = HeadLayout::grid;
    std::size_t views = 1;
    // Second feature network for plain pairwise dependence between X and Y.
    std::vector<BlockSpec> partner;
    std::size_t partner_input_channels = 0;

    std::size_t feature_width() const;
    // rows x cols arrangement of the views for the grid head layout.
    std::pair<std::size_t, std::size_t> view_grid() const;

    // Throws ConfigError on an inconsistent channel chain.
    void validate() const;

    bool operator==(const NetworkSpec&) const = default;
};

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

// Desk-scale topology: L0 pointwise, then blocks - 1 sandwiches of
// 1x1/3x3/1x1, pooling after every second one, global average after the
// last, then a pointwise LF block with a linear output.
NetworkSpec default_network_spec(std::size_t input_channels, std::size_t k, std::size_t hidden,
                                 std::size_t n_noise, std::size_t blocks, std::size_t views);

// Two pointwise MLPs, f on X and the partner g on Y, for one-hot inputs.
NetworkSpec pairwise_network_spec(std::size_t x_channels, std::size_t y_channels, std::size_t k,
                                  std::size_t hidden);

struct ScaleInfo {
    std::size_t lower_h = 0, lower_w = 0;  // block input after pooling and padding
    std::size_t upper_h = 0, upper_w = 0;  // block output
    std::size_t win_h = 0, win_w = 0;      // lower window read by one upper element
    std::size_t rf = 0;                    // receptive field of an output element, input pixels
    std::size_t jump = 1;                  // input-pixel stride between neighboring lower elements
    std::size_t pad = 0;
    std::size_t pool_before = 1;           // pooling applied to the previous block's output
};

struct ScaleGeometry {
    std::size_t input_h = 0, input_w = 0;
    std::vector<ScaleInfo> blocks;
};

ScaleGeometry geometry(const NetworkSpec& spec, std::size_t input_h, std::size_t input_w);

enum class Direction { down, up };

// Half-open index ranges on a grid.
struct WindowRange {
    std::size_t row_begin = 0, row_end = 0;
    std::size_t col_begin = 0, col_end = 0;
    bool contains(std::size_t i, std::size_t j) const {
        return i >= row_begin && i < row_end && j >= col_begin && j < col_end;
    }
};

// Block s: down maps an upper element to the lower window it reads; up maps a
// lower element to the upper elements whose windows cover it.
WindowRange window_map(const ScaleGeometry& geom, std::size_t s, std::size_t i, std::size_t j,
                       Direction direction);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct ForwardResult {
    std::vector<Tensor> outputs;  // Z of every block, NCHW
    std::vector<Tensor> lowers;   // padded block inputs; lowers[0] is the raw padded image
    Tensor features;              // last block output flattened to N x K
};

class Network {
public:
    Network(NetworkSpec spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }

    ForwardResult forward_all(const Tensor& input, Mode mode, std::uint64_t noise_seed);

    // (B L) x K view features, source-major -> B x K group features.
    Tensor forward_head(const Tensor& view_features, Mode mode, std::uint64_t noise_seed);

    // Partner network output as positions x K.
    Tensor forward_partner(const Tensor& input, Mode mode, std::uint64_t noise_seed);

    std::vector<NamedTensor> parameters() const;
    // Running statistics of every norm layer, as mean/var tensors keyed by name.
    std::vector<NamedTensor> buffers() const;
    void load_buffers(const std::vector<NamedTensor>& values);
    std::size_t parameter_count() const;

private:
    struct Layer {
        ConvLayerSpec spec;
        Tensor kernel, bias, scale, shift;
        BatchNormState norm;
    };
    struct Block {
        BlockSpec spec;
        std::vector<Layer> layers;
    };

    std::vector<Block> build_stack(const std::vector<BlockSpec>& specs, std::size_t in_channels,
                                   std::uint64_t seed, const std::string& prefix);
    Tensor run_block(Block& block, const Tensor& input, Mode mode, std::uint64_t noise_seed,
                     std::size_t index, Tensor* lower);

    NetworkSpec spec_;
    std::vector<Block> blocks_;
    std::vector<Block> head_;
    std::vector<Block> partner_;
    std::vector<std::string> param_names_;
    std::vector<Tensor> params_;
};

}  // namespace hfmca
