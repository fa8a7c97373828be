#include "hfmca/network.hpp"

#include <cmath>
#include <set>

#include "hfmca/errors.hpp"
#include "hfmca/json_util.hpp"
#include "hfmca/rng.hpp"

namespace hfmca {

using nlohmann::json;

std::size_t BlockSpec::window() const {
    std::size_t w = 1;
    for (const auto& l : layers) w += l.kernel - 1;
    return w;
}

std::size_t BlockSpec::out_channels() const {
    return layers.empty() ? 0 : layers.back().out_channels;
}

std::size_t NetworkSpec::feature_width() const {
    return blocks.empty() ? 0 : blocks.back().out_channels();
}

std::pair<std::size_t, std::size_t> NetworkSpec::view_grid() const {
    std::size_t rows = 1;
    for (std::size_t r = 1; r * r <= views; ++r)
        if (views % r == 0) rows = r;
    return {rows, views / rows};
}

namespace {

void check_stack(const std::vector<BlockSpec>& blocks, std::size_t in, const std::string& what,
                 std::size_t k) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const BlockSpec& blk = blocks[b];
        const std::string where = what + " block " + std::to_string(b);
        if (blk.layers.empty()) throw ConfigError(where + " has no layers");
        if (blk.post_pool == 0) throw ConfigError(where + ": pool window must be >= 1");
        for (const auto& l : blk.layers) {
            if (l.kernel == 0) throw ConfigError(where + ": kernel size must be >= 1");
            if (l.out_channels == 0) throw ConfigError(where + ": zero output channels");
        }
        if (k != 0 && blk.out_channels() != k)
            throw ConfigError(where + " outputs " + std::to_string(blk.out_channels()) +
                              " channels, expected the shared width " + std::to_string(k));
        (void)in;
    }
}

}  // namespace

void NetworkSpec::validate() const {
    if (blocks.empty()) throw ConfigError("network: at least one block is required");
    if (input_channels == 0) throw ConfigError("network: input_channels must be positive");
    const std::size_t k = feature_width();
    check_stack(blocks, input_channels, "backbone", k);
    if (views == 0) throw ConfigError("network: views must be >= 1");
    if (head) {
        check_stack({*head}, k, "head", k);
        if (head->post_pool != 1) throw ConfigError("network: head cannot pool after its output");
    }
    if (!partner.empty()) {
        if (partner_input_channels == 0)
            throw ConfigError("network: partner_input_channels must be positive");
        check_stack(partner, partner_input_channels, "partner", k);
    }
}

namespace {

const char* act_name(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "none";
}

Activation act_from(const std::string& s) {
    if (s == "none") return Activation::none;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ConfigError("unknown activation '" + s + "'");
}

using jsonu::get_or;
using jsonu::reject_unknown;

json block_json(const BlockSpec& b) {
    json layers = json::array();
    for (const auto& l : b.layers)
        layers.push_back({{"kernel", l.kernel},
                          {"out", l.out_channels},
                          {"norm", l.norm},
                          {"act", act_name(l.act)}});
    return {{"noise", b.n_noise},
            {"pad", b.pre_pad},
            {"layers", layers},
            {"pool", b.post_pool},
            {"global_pool", b.global_pool}};
}

BlockSpec block_from(const json& j, const std::string& where) {
    reject_unknown(j, {"noise", "pad", "layers", "pool", "global_pool"}, where);
    BlockSpec b;
    b.n_noise = get_or<std::size_t>(j, "noise", 0);
    b.pre_pad = get_or<std::size_t>(j, "pad", 0);
    b.post_pool = get_or<std::size_t>(j, "pool", 1);
    b.global_pool = get_or<bool>(j, "global_pool", false);
    if (!j.contains("layers") || !j["layers"].is_array())
        throw ConfigError(where + ": 'layers' array is required");
    for (const auto& lj : j["layers"]) {
        reject_unknown(lj, {"kernel", "out", "norm", "act"}, where + " layer");
        ConvLayerSpec l;
        l.kernel = get_or<std::size_t>(lj, "kernel", 1);
        if (!lj.contains("out")) throw ConfigError(where + " layer: 'out' is required");
        l.out_channels = get_or<std::size_t>(lj, "out", 0);
        l.norm = get_or<bool>(lj, "norm", true);
        l.act = act_from(get_or<std::string>(lj, "act", "relu"));
        b.layers.push_back(l);
    }
    return b;
}

}  // namespace

json to_json(const NetworkSpec& spec) {
    json blocks = json::array();
    for (const auto& b : spec.blocks) blocks.push_back(block_json(b));
    json partner = json::array();
    for (const auto& b : spec.partner) partner.push_back(block_json(b));
    return {{"input_channels", spec.input_channels},
            {"blocks", blocks},
            {"head", spec.head ? block_json(*spec.head) : json(nullptr)},
            {"head_layout", spec.head_layout == HeadLayout::grid ? "grid" : "channels"},
            {"views", spec.views},
            {"partner", partner},
            {"partner_input_channels", spec.partner_input_channels}};
}

NetworkSpec network_spec_from_json(const json& j) {
    reject_unknown(j,
                   {"input_channels", "blocks", "head", "head_layout", "views", "partner",
                    "partner_input_channels"},
                   "network");
    NetworkSpec s;
    s.input_channels = get_or<std::size_t>(j, "input_channels", 3);
    if (!j.contains("blocks") || !j["blocks"].is_array())
        throw ConfigError("network: 'blocks' array is required");
    for (std::size_t b = 0; b < j["blocks"].size(); ++b)
        s.blocks.push_back(block_from(j["blocks"][b], "block " + std::to_string(b)));
    if (j.contains("head") && !j["head"].is_null()) s.head = block_from(j["head"], "head");
    const std::string layout = get_or<std::string>(j, "head_layout", "grid");
    if (layout == "grid")
        s.head_layout = HeadLayout::grid;
    else if (layout == "channels")
        s.head_layout = HeadLayout::channels;
    else
        throw ConfigError("network: unknown head_layout '" + layout + "'");
    s.views = get_or<std::size_t>(j, "views", 1);
    if (j.contains("partner"))
        for (std::size_t b = 0; b < j["partner"].size(); ++b)
            s.partner.push_back(block_from(j["partner"][b], "partner " + std::to_string(b)));
    s.partner_input_channels = get_or<std::size_t>(j, "partner_input_channels", 0);
    s.validate();
    return s;
}

NetworkSpec default_network_spec(std::size_t input_channels, std::size_t k, std::size_t hidden,
                                 std::size_t n_noise, std::size_t blocks, std::size_t views) {
    NetworkSpec s;
    s.input_channels = input_channels;
    s.views = views;
    BlockSpec l0;
    l0.n_noise = n_noise;
    l0.layers = {{1, hidden, true, Activation::relu},
                 {1, hidden, true, Activation::relu},
                 {1, k, true, Activation::sigmoid}};
    s.blocks.push_back(l0);
    for (std::size_t b = 1; b < blocks; ++b) {
        BlockSpec blk;
        blk.n_noise = n_noise;
        blk.pre_pad = 1;
        blk.layers = {{1, hidden, true, Activation::relu},
                      {3, hidden, true, Activation::relu},
                      {1, k, true, Activation::sigmoid}};
        if (b % 2 == 0 && b + 1 < blocks) blk.post_pool = 2;
        blk.global_pool = b + 1 == blocks;
        s.blocks.push_back(blk);
    }
    // Pointwise LF block on the pooled features. Its batch-normalized linear
    // output keeps every feature direction at unit scale, where a sigmoid
    // after global averaging leaves near-singular feature correlations.
    BlockSpec lf;
    lf.n_noise = n_noise;
    lf.layers = {{1, hidden, true, Activation::relu}, {1, k, true, Activation::none}};
    s.blocks.push_back(lf);
    BlockSpec head;
    head.layers = {{1, hidden, true, Activation::relu},
                   {0, hidden, true, Activation::relu},
                   {1, k, true, Activation::sigmoid}};
    const auto [rows, cols] = s.view_grid();
    // Middle layer spans the whole view grid; grids that are not square fall
    // back to a global average after a pointwise layer.
    head.layers[1].kernel = rows == cols ? rows : 1;
    head.global_pool = rows != cols;
    s.head = head;
    s.validate();
    return s;
}

NetworkSpec pairwise_network_spec(std::size_t x_channels, std::size_t y_channels, std::size_t k,
                                  std::size_t hidden) {
    auto stack = [&] {
        BlockSpec blk;
        blk.layers = {{1, hidden, false, Activation::relu},
                      {1, hidden, false, Activation::relu},
                      {1, k, false, Activation::none}};
        return std::vector<BlockSpec>{blk};
    };
    NetworkSpec s;
    s.input_channels = x_channels;
    s.blocks = stack();
    s.partner = stack();
    s.partner_input_channels = y_channels;
    s.validate();
    return s;
}

ScaleGeometry geometry(const NetworkSpec& spec, std::size_t input_h, std::size_t input_w) {
    ScaleGeometry g;
    g.input_h = input_h;
    g.input_w = input_w;
    std::size_t h = input_h, w = input_w;
    std::size_t rf = 1, jump = 1;
    std::size_t pool = 1;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const BlockSpec& blk = spec.blocks[b];
        ScaleInfo info;
        if (pool > 1) {
            if (h % pool != 0 || w % pool != 0)
                throw ShapeError("geometry: block " + std::to_string(b) + " input " +
                                 std::to_string(h) + "x" + std::to_string(w) +
                                 " not divisible by pool " + std::to_string(pool));
            rf += (pool - 1) * jump;
            jump *= pool;
            h /= pool;
            w /= pool;
        }
        info.pool_before = pool;
        info.pad = blk.pre_pad;
        h += 2 * blk.pre_pad;
        w += 2 * blk.pre_pad;
        info.lower_h = h;
        info.lower_w = w;
        info.jump = jump;
        const std::size_t win = blk.window();
        if (win > h || win > w)
            throw ShapeError("geometry: block " + std::to_string(b) + " kernels exceed its input");
        if (blk.global_pool) {
            info.win_h = h;
            info.win_w = w;
            info.upper_h = info.upper_w = 1;
            rf += (std::max(h, w) - 1) * jump;
        } else {
            info.win_h = info.win_w = win;
            info.upper_h = h - win + 1;
            info.upper_w = w - win + 1;
            rf += (win - 1) * jump;
        }
        info.rf = rf;
        g.blocks.push_back(info);
        h = info.upper_h;
        w = info.upper_w;
        pool = blk.post_pool;
    }
    return g;
}

WindowRange window_map(const ScaleGeometry& geom, std::size_t s, std::size_t i, std::size_t j,
                       Direction direction) {
    if (s >= geom.blocks.size()) throw ShapeError("window_map: scale out of range");
    const ScaleInfo& info = geom.blocks[s];
    if (direction == Direction::down) {
        if (i >= info.upper_h || j >= info.upper_w)
            throw ShapeError("window_map: upper index out of range");
        return {i, i + info.win_h, j, j + info.win_w};
    }
    if (i >= info.lower_h || j >= info.lower_w)
        throw ShapeError("window_map: lower index out of range");
    const std::size_t r0 = i + 1 >= info.win_h ? i + 1 - info.win_h : 0;
    const std::size_t c0 = j + 1 >= info.win_w ? j + 1 - info.win_w : 0;
    const std::size_t r1 = std::min(i, info.upper_h - 1) + 1;
    const std::size_t c1 = std::min(j, info.upper_w - 1) + 1;
    return {r0, r1, c0, c1};
}

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    blocks_ = build_stack(spec_.blocks, spec_.input_channels, derive_seed(seed, "init", 0), "block");
    if (spec_.head) {
        const std::size_t k = spec_.feature_width();
        const std::size_t in = spec_.head_layout == HeadLayout::grid ? k : k * spec_.views;
        head_ = build_stack({*spec_.head}, in, derive_seed(seed, "init", 1), "head");
    }
    if (!spec_.partner.empty())
        partner_ = build_stack(spec_.partner, spec_.partner_input_channels,
                               derive_seed(seed, "init", 2), "partner");
}

std::vector<Network::Block> Network::build_stack(const std::vector<BlockSpec>& specs,
                                                 std::size_t in_channels, std::uint64_t seed,
                                                 const std::string& prefix) {
    Rng rng(seed);
    std::vector<Block> stack;
    std::size_t in = in_channels;
    for (std::size_t b = 0; b < specs.size(); ++b) {
        Block blk;
        blk.spec = specs[b];
        std::size_t c = in + specs[b].n_noise;
        for (std::size_t l = 0; l < specs[b].layers.size(); ++l) {
            const ConvLayerSpec& ls = specs[b].layers[l];
            Layer layer;
            layer.spec = ls;
            const std::size_t fan_in = c * ls.kernel * ls.kernel;
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            std::vector<double> k(ls.out_channels * fan_in);
            for (double& v : k) v = rng.uniform(-bound, bound);
            layer.kernel = Tensor::parameter({ls.out_channels, c, ls.kernel, ls.kernel}, std::move(k));
            layer.bias = Tensor::parameter({ls.out_channels}, std::vector<double>(ls.out_channels, 0.0));
            const std::string name = prefix + std::to_string(b) + ".layer" + std::to_string(l);
            param_names_.push_back(name + ".kernel");
            params_.push_back(layer.kernel);
            param_names_.push_back(name + ".bias");
            params_.push_back(layer.bias);
            if (ls.norm) {
                layer.scale = Tensor::parameter({ls.out_channels}, std::vector<double>(ls.out_channels, 1.0));
                layer.shift = Tensor::parameter({ls.out_channels}, std::vector<double>(ls.out_channels, 0.0));
                layer.norm = BatchNormState(ls.out_channels);
                param_names_.push_back(name + ".scale");
                params_.push_back(layer.scale);
                param_names_.push_back(name + ".shift");
                params_.push_back(layer.shift);
            }
            blk.layers.push_back(std::move(layer));
            c = ls.out_channels;
        }
        in = c;
        stack.push_back(std::move(blk));
    }
    return stack;
}

Tensor Network::run_block(Block& block, const Tensor& input, Mode mode, std::uint64_t noise_seed,
                          std::size_t index, Tensor* lower) {
    Tensor x = pad2d(input, block.spec.pre_pad);
    if (lower) *lower = x;
    if (block.spec.n_noise > 0) {
        Rng rng(derive_seed(noise_seed, "block", index));
        x = append_noise(x, block.spec.n_noise, rng);
    }
    for (Layer& layer : block.layers) {
        if (layer.spec.kernel > x.dim(2) || layer.spec.kernel > x.dim(3))
            throw ShapeError("network: kernel exceeds feature map " + shape_string(x.shape()));
        x = conv2d(x, layer.kernel, layer.bias);
        if (layer.spec.norm) x = batchnorm2d(x, layer.scale, layer.shift, layer.norm, mode);
        x = activation(x, layer.spec.act);
    }
    if (block.spec.global_pool) x = avgpool2d(x, x.dim(2), x.dim(3));
    return x;
}

namespace {

Tensor flatten_features(const Tensor& z) {
    Tensor x = z;
    if (x.dim(2) != 1 || x.dim(3) != 1) x = avgpool2d(x, x.dim(2), x.dim(3));
    return reshape(x, {x.dim(0), x.dim(1)});
}

}  // namespace

ForwardResult Network::forward_all(const Tensor& input, Mode mode, std::uint64_t noise_seed) {
    if (input.rank() != 4 || input.dim(1) != spec_.input_channels)
        throw ShapeError("network: expected N x " + std::to_string(spec_.input_channels) +
                         " x H x W input, got " + shape_string(input.shape()));
    ForwardResult r;
    Tensor x = input;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        if (b > 0) {
            const std::size_t pool = blocks_[b - 1].spec.post_pool;
            if (pool > 1) x = avgpool2d(x, pool);
        }
        Tensor lower;
        x = run_block(blocks_[b], x, mode, noise_seed, b, &lower);
        r.lowers.push_back(lower);
        r.outputs.push_back(x);
    }
    r.features = flatten_features(x);
    return r;
}

Tensor Network::forward_head(const Tensor& view_features, Mode mode, std::uint64_t noise_seed) {
    if (head_.empty()) throw ConfigError("network: no external head configured");
    const std::size_t k = spec_.feature_width();
    const std::size_t views = spec_.views;
    if (view_features.rank() != 2 || view_features.dim(1) != k)
        throw ShapeError("head: expected (B L) x K view features, got " +
                         shape_string(view_features.shape()));
    Tensor x;
    if (spec_.head_layout == HeadLayout::grid) {
        const auto [rows, cols] = spec_.view_grid();
        x = views_to_grid(view_features, views, rows, cols);
    } else {
        if (view_features.dim(0) % views != 0) throw ShapeError("head: rows not divisible by views");
        x = reshape(view_features, {view_features.dim(0) / views, views * k, 1, 1});
    }
    x = run_block(head_[0], x, mode, derive_seed(noise_seed, "head"), 0, nullptr);
    return flatten_features(x);
}

Tensor Network::forward_partner(const Tensor& input, Mode mode, std::uint64_t noise_seed) {
    if (partner_.empty()) throw ConfigError("network: no partner network configured");
    if (input.rank() != 4 || input.dim(1) != spec_.partner_input_channels)
        throw ShapeError("partner: input channel mismatch");
    Tensor x = input;
    for (std::size_t b = 0; b < partner_.size(); ++b) {
        if (b > 0 && partner_[b - 1].spec.post_pool > 1) x = avgpool2d(x, partner_[b - 1].spec.post_pool);
        x = run_block(partner_[b], x, mode, derive_seed(noise_seed, "partner"), b, nullptr);
    }
    return to_positions(x);
}

std::vector<NamedTensor> Network::parameters() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({param_names_[i], params_[i]});
    return out;
}

std::vector<NamedTensor> Network::buffers() const {
    std::vector<NamedTensor> out;
    auto collect = [&](const std::vector<Block>& stack, const std::string& prefix) {
        for (std::size_t b = 0; b < stack.size(); ++b)
            for (std::size_t l = 0; l < stack[b].layers.size(); ++l) {
                const Layer& layer = stack[b].layers[l];
                if (!layer.spec.norm) continue;
                const std::string name = prefix + std::to_string(b) + ".layer" + std::to_string(l);
                const std::size_t c = layer.norm.running_mean.size();
                out.push_back({name + ".running_mean", Tensor::from({c}, layer.norm.running_mean)});
                out.push_back({name + ".running_var", Tensor::from({c}, layer.norm.running_var)});
            }
    };
    collect(blocks_, "block");
    collect(head_, "head");
    collect(partner_, "partner");
    return out;
}

void Network::load_buffers(const std::vector<NamedTensor>& values) {
    std::size_t idx = 0;
    auto assign = [&](std::vector<Block>& stack, const std::string& prefix) {
        for (std::size_t b = 0; b < stack.size(); ++b)
            for (std::size_t l = 0; l < stack[b].layers.size(); ++l) {
                Layer& layer = stack[b].layers[l];
                if (!layer.spec.norm) continue;
                const std::string name = prefix + std::to_string(b) + ".layer" + std::to_string(l);
                for (auto* target : {&layer.norm.running_mean, &layer.norm.running_var}) {
                    if (idx >= values.size()) throw ShapeError("network: missing norm buffers");
                    const NamedTensor& v = values[idx++];
                    const std::string expect =
                        name + (target == &layer.norm.running_mean ? ".running_mean" : ".running_var");
                    if (v.name != expect || v.tensor.numel() != target->size())
                        throw ShapeError("network: buffer '" + v.name + "' does not match '" + expect + "'");
                    target->assign(v.tensor.data().begin(), v.tensor.data().end());
                }
            }
    };
    assign(blocks_, "block");
    assign(head_, "head");
    assign(partner_, "partner");
    if (idx != values.size()) throw ShapeError("network: unexpected extra norm buffers");
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.numel();
    return n;
}

}  // namespace hfmca
