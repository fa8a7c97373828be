#include "hfmca/config.hpp"

#include <fstream>

#include "hfmca/errors.hpp"
#include "hfmca/json_util.hpp"
#include "hfmca/rng.hpp"

namespace hfmca {

using json = nlohmann::json;
using jsonu::get_or;
using jsonu::reject_unknown;

namespace {

const char* mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::self_supervised: return "self_supervised";
        case TrainMode::supervised: return "supervised";
        case TrainMode::unsupervised: return "unsupervised";
        case TrainMode::pairwise: return "pairwise";
    }
    return "?";
}

TrainMode mode_from(const std::string& s) {
    for (TrainMode m : {TrainMode::self_supervised, TrainMode::supervised, TrainMode::unsupervised,
                        TrainMode::pairwise})
        if (s == mode_name(m)) return m;
    throw ConfigError("train: unknown mode '" + s + "'");
}

const char* kind_name(DatasetConfig::Kind k) {
    switch (k) {
        case DatasetConfig::Kind::synthetic: return "synthetic";
        case DatasetConfig::Kind::cifar10: return "cifar10";
        case DatasetConfig::Kind::joint: return "joint";
    }
    return "?";
}

OptimizerSpec optimizer_from(const json& j) {
    reject_unknown(j, {"kind", "lr", "momentum", "beta1", "beta2", "epsilon"}, "optimizer");
    OptimizerSpec o;
    const std::string kind = get_or<std::string>(j, "kind", "sgd");
    if (kind == "adam") {
        o.kind = OptimizerSpec::Kind::adam;
        o.lr = 1e-4;
    } else if (kind != "sgd") {
        throw ConfigError("optimizer: unknown kind '" + kind + "'");
    }
    o.lr = get_or(j, "lr", o.lr);
    o.momentum = get_or(j, "momentum", o.momentum);
    o.beta1 = get_or(j, "beta1", o.beta1);
    o.beta2 = get_or(j, "beta2", o.beta2);
    o.epsilon = get_or(j, "epsilon", o.epsilon);
    return o;
}

TrainConfig train_from(const json& j) {
    reject_unknown(j,
                   {"mode", "internal", "external", "views", "ridge", "beta", "internal_weight", "batch",
                    "steps", "center", "spectrum_every", "optimizer"},
                   "train");
    TrainConfig t;
    t.mode = mode_from(get_or<std::string>(j, "mode", "self_supervised"));
    t.use_internal = get_or(j, "internal", t.use_internal);
    t.use_external = get_or(j, "external", t.use_external);
    t.views = get_or(j, "views", t.views);
    t.ridge = get_or(j, "ridge", t.ridge);
    t.beta = get_or(j, "beta", t.beta);
    t.internal_weight = get_or(j, "internal_weight", t.internal_weight);
    t.batch = get_or(j, "batch", t.batch);
    t.steps = get_or(j, "steps", t.steps);
    t.center = get_or(j, "center", t.center);
    t.spectrum_every = get_or(j, "spectrum_every", t.spectrum_every);
    if (j.contains("optimizer")) t.optimizer = optimizer_from(j["optimizer"]);
    return t;
}

AugmentProtocol augment_from(const json& j) {
    reject_unknown(j, {"crop", "jitter", "gray"}, "augment");
    AugmentProtocol a;
    a.crop = get_or(j, "crop", a.crop);
    a.jitter = get_or(j, "jitter", a.jitter);
    a.gray = get_or(j, "gray", a.gray);
    return a;
}

DatasetConfig dataset_from(const json& j) {
    reject_unknown(j,
                   {"kind", "train_size", "test_size", "classes", "height", "width", "shuffle_labels", "train",
                    "test", "limit", "path", "table"},
                   "dataset");
    DatasetConfig d;
    const std::string kind = get_or<std::string>(j, "kind", "synthetic");
    if (kind == "synthetic") d.kind = DatasetConfig::Kind::synthetic;
    else if (kind == "cifar10") d.kind = DatasetConfig::Kind::cifar10;
    else if (kind == "joint") d.kind = DatasetConfig::Kind::joint;
    else throw ConfigError("dataset: unknown kind '" + kind + "'");
    d.train_size = get_or(j, "train_size", d.train_size);
    d.test_size = get_or(j, "test_size", d.test_size);
    d.classes = get_or(j, "classes", d.classes);
    d.height = get_or(j, "height", d.height);
    d.width = get_or(j, "width", d.width);
    d.shuffle_labels = get_or(j, "shuffle_labels", d.shuffle_labels);
    d.train_path = get_or<std::string>(j, "train", "");
    d.test_path = get_or<std::string>(j, "test", "");
    d.limit = get_or(j, "limit", d.limit);
    d.joint_path = get_or<std::string>(j, "path", "");
    d.joint_rows = get_or(j, "table", d.joint_rows);
    return d;
}

}  // namespace

void RunConfig::validate() const {
    train.validate();
    if (network) network->validate();
    if (network_default.k == 0 || network_default.hidden == 0 || network_default.blocks == 0)
        throw ConfigError("network_default: k, hidden and blocks must be positive");
    if (!(spectrum_ridge >= 0.0)) throw ConfigError("spectrum: ridge must be non-negative");
    if (spectrum_batch < 2) throw ConfigError("spectrum: batch must be >= 2");
    const bool joint = dataset.kind == DatasetConfig::Kind::joint;
    if (joint != (train.mode == TrainMode::pairwise))
        throw ConfigError("pairwise mode and the joint dataset go together");
    switch (dataset.kind) {
        case DatasetConfig::Kind::synthetic:
            if (dataset.train_size == 0 || dataset.classes == 0) throw ConfigError("dataset: empty synthetic set");
            if (dataset.height < 4 || dataset.width < 4) throw ConfigError("dataset: synthetic images need >= 4x4");
            break;
        case DatasetConfig::Kind::cifar10:
            if (dataset.train_path.empty()) throw ConfigError("dataset: cifar10 needs a 'train' path");
            break;
        case DatasetConfig::Kind::joint:
            if (dataset.joint_path.empty() == dataset.joint_rows.empty())
                throw ConfigError("dataset: joint needs exactly one of 'path' or 'table'");
            break;
    }
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j, {"seed", "train", "augment", "network", "network_default", "dataset", "spectrum", "emit"},
                   "config");
    RunConfig c;
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
    if (j.contains("train")) c.train = train_from(j["train"]);
    if (j.contains("augment")) c.train.augment = augment_from(j["augment"]);
    c.train.seed = c.seed;
    if (j.contains("network")) {
        try {
            c.network = network_spec_from_json(j["network"]);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("network: ") + e.what());
        }
    }
    if (j.contains("network_default")) {
        const json& n = j["network_default"];
        reject_unknown(n, {"k", "hidden", "noise", "blocks"}, "network_default");
        c.network_default.k = get_or(n, "k", c.network_default.k);
        c.network_default.hidden = get_or(n, "hidden", c.network_default.hidden);
        c.network_default.noise = get_or(n, "noise", c.network_default.noise);
        c.network_default.blocks = get_or(n, "blocks", c.network_default.blocks);
    }
    if (j.contains("network") && j.contains("network_default"))
        throw ConfigError("config: give either 'network' or 'network_default'");
    if (j.contains("dataset")) c.dataset = dataset_from(j["dataset"]);
    if (j.contains("spectrum")) {
        const json& s = j["spectrum"];
        reject_unknown(s, {"ridge", "batch"}, "spectrum");
        c.spectrum_ridge = get_or(s, "ridge", c.spectrum_ridge);
        c.spectrum_batch = get_or(s, "batch", c.spectrum_batch);
    }
    if (j.contains("emit")) {
        const json& e = j["emit"];
        reject_unknown(e, {"cost_trace", "spectrum_csv", "response_maps"}, "emit");
        c.emit.cost_trace = get_or(e, "cost_trace", c.emit.cost_trace);
        c.emit.spectrum_csv = get_or(e, "spectrum_csv", c.emit.spectrum_csv);
        c.emit.response_maps = get_or(e, "response_maps", c.emit.response_maps);
    }
    c.train.normalize();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
    const TrainConfig& t = c.train;
    json opt = {{"kind", t.optimizer.kind == OptimizerSpec::Kind::adam ? "adam" : "sgd"},
                {"lr", t.optimizer.lr},
                {"momentum", t.optimizer.momentum},
                {"beta1", t.optimizer.beta1},
                {"beta2", t.optimizer.beta2},
                {"epsilon", t.optimizer.epsilon}};
    json j = {{"seed", c.seed},
              {"train",
               {{"mode", mode_name(t.mode)},
                {"internal", t.use_internal},
                {"external", t.use_external},
                {"views", t.views},
                {"ridge", t.ridge},
                {"beta", t.beta},
                {"internal_weight", t.internal_weight},
                {"batch", t.batch},
                {"steps", t.steps},
                {"center", t.center},
                {"spectrum_every", t.spectrum_every},
                {"optimizer", opt}}},
              {"augment", {{"crop", t.augment.crop}, {"jitter", t.augment.jitter}, {"gray", t.augment.gray}}},
              {"spectrum", {{"ridge", c.spectrum_ridge}, {"batch", c.spectrum_batch}}},
              {"emit",
               {{"cost_trace", c.emit.cost_trace},
                {"spectrum_csv", c.emit.spectrum_csv},
                {"response_maps", c.emit.response_maps}}}};
    if (c.network) {
        j["network"] = to_json(*c.network);
    } else {
        j["network_default"] = {{"k", c.network_default.k},
                                {"hidden", c.network_default.hidden},
                                {"noise", c.network_default.noise},
                                {"blocks", c.network_default.blocks}};
    }
    const DatasetConfig& d = c.dataset;
    json ds = {{"kind", kind_name(d.kind)}};
    switch (d.kind) {
        case DatasetConfig::Kind::synthetic:
            ds.update({{"train_size", d.train_size},
                       {"test_size", d.test_size},
                       {"classes", d.classes},
                       {"height", d.height},
                       {"width", d.width},
                       {"shuffle_labels", d.shuffle_labels}});
            break;
        case DatasetConfig::Kind::cifar10:
            ds.update({{"train", d.train_path}, {"test", d.test_path}, {"limit", d.limit}});
            break;
        case DatasetConfig::Kind::joint:
            if (!d.joint_path.empty()) ds["path"] = d.joint_path;
            else ds["table"] = d.joint_rows;
            break;
    }
    j["dataset"] = ds;
    return j;
}

namespace {

LabeledDataset first_n(const LabeledDataset& data, std::size_t limit) {
    if (limit == 0 || limit >= data.size()) return data;
    std::vector<std::size_t> idx(limit);
    for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
    return data.subset(idx);
}

}  // namespace

LoadedData load_data(const RunConfig& c) {
    LoadedData out;
    const DatasetConfig& d = c.dataset;
    switch (d.kind) {
        case DatasetConfig::Kind::synthetic: {
            LabeledDataset all = generate_synthetic(d.train_size + d.test_size, d.classes, d.height, d.width,
                                                    derive_seed(c.seed, "data"));
            if (d.shuffle_labels) all = shuffle_labels(std::move(all), derive_seed(c.seed, "labels"));
            std::vector<std::size_t> train(d.train_size), test(d.test_size);
            for (std::size_t i = 0; i < d.train_size; ++i) train[i] = i;
            for (std::size_t i = 0; i < d.test_size; ++i) test[i] = d.train_size + i;
            out.train = all.subset(train);
            if (d.test_size) out.test = all.subset(test);
            break;
        }
        case DatasetConfig::Kind::cifar10:
            out.train = first_n(load_cifar10(d.train_path), d.limit);
            if (!d.test_path.empty()) out.test = first_n(load_cifar10(d.test_path), d.limit);
            if (d.shuffle_labels) out.train = shuffle_labels(std::move(*out.train), derive_seed(c.seed, "labels"));
            break;
        case DatasetConfig::Kind::joint:
            if (!d.joint_path.empty()) {
                out.joint = read_joint_csv(d.joint_path);
            } else {
                const std::size_t n = d.joint_rows.size(), m = d.joint_rows[0].size();
                std::vector<double> p;
                for (const auto& row : d.joint_rows) {
                    if (row.size() != m) throw ConfigError("dataset: joint table rows differ in length");
                    p.insert(p.end(), row.begin(), row.end());
                }
                try {
                    out.joint = JointTable(n, m, std::move(p));
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(std::string("dataset: ") + e.what());
                }
            }
            break;
    }
    return out;
}

NetworkSpec resolve_network(const RunConfig& c, const LoadedData& data) {
    if (c.network) return *c.network;
    const DefaultNetworkConfig& n = c.network_default;
    if (data.joint) return pairwise_network_spec(data.joint->n(), data.joint->m(), n.k, n.hidden);
    return default_network_spec(data.train->dims.c, n.k, n.hidden, n.noise, n.blocks, c.train.views);
}

DataSource data_source(const LoadedData& data) {
    DataSource s;
    if (data.train) s.images = &*data.train;
    if (data.joint) s.joint = &*data.joint;
    return s;
}

}  // namespace hfmca
