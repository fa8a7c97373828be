#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hfmca/hierarchy.hpp"
#include "hfmca/network.hpp"
#include "hfmca/oracle.hpp"
#include "hfmca/trainer.hpp"

namespace hfmca {

struct DatasetConfig {
    enum class Kind { synthetic, cifar10, joint };
    Kind kind = Kind::synthetic;
    // synthetic
    std::size_t train_size = 512;
    std::size_t test_size = 256;
    std::size_t classes = 4;
    std::size_t height = 8, width = 8;
    bool shuffle_labels = false;
    // cifar10: binary batch files; limit 0 keeps everything
    std::string train_path, test_path;
    std::size_t limit = 0;
    // joint: CSV path or inline rows
    std::string joint_path;
    std::vector<std::vector<double>> joint_rows;
};

// Parameters for the built-in topologies when no explicit network is given.
struct DefaultNetworkConfig {
    std::size_t k = 16;
    std::size_t hidden = 32;
    std::size_t noise = 4;
    std::size_t blocks = 4;
};

struct EmitConfig {
    bool cost_trace = true;
    bool spectrum_csv = true;
    bool response_maps = true;
};

struct RunConfig {
    std::uint64_t seed = 0;
    TrainConfig train;
    std::optional<NetworkSpec> network;  // explicit topology
    DefaultNetworkConfig network_default;
    DatasetConfig dataset;
    double spectrum_ridge = 0.001;
    std::size_t spectrum_batch = 256;
    EmitConfig emit;

    void validate() const;
};

// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& config);

struct LoadedData {
    std::optional<LabeledDataset> train;
    std::optional<LabeledDataset> test;
    std::optional<JointTable> joint;
};

LoadedData load_data(const RunConfig& config);

// Explicit spec, or the default topology for the data and mode.
NetworkSpec resolve_network(const RunConfig& config, const LoadedData& data);
DataSource data_source(const LoadedData& data);

}  // namespace hfmca
