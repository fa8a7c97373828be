#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hfmca/network.hpp"
#include "hfmca/spectrum.hpp"

namespace hfmca {

class Trainer;

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    NetworkSpec spec;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

// "HFMC", u32 version, u64 length + JSON network spec, u32 tensor count, then
// per tensor: u32 name length, name, u32 rank, u64 dims, little-endian doubles.
void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

// Full training state: parameters, norm buffers, optimizer, filter bank, step.
CheckpointData trainer_state(const Trainer& trainer);
void save_trainer(const Trainer& trainer, const std::string& path);
// The trainer must have been built from the same network spec.
void load_trainer(Trainer& trainer, const std::string& path);

// Network with parameters and norm buffers restored, for evaluation.
Network load_network(const std::string& path);

// FNV-1a over the file bytes; ties cached spectra to one checkpoint.
std::uint64_t file_fingerprint(const std::string& path);

// Spectra of a checkpoint in the checkpoint container, tensors
// "spectrum/<layer>/{sigma,raw,u,v,wphi,wpsi,ridge}" plus "source".
void write_spectrum_cache(const std::string& path, const NetworkSpec& spec, std::uint64_t source,
                          const std::vector<SpectrumResult>& spectra);
// Empty when the file is missing or was computed from another checkpoint.
std::vector<SpectrumResult> read_spectrum_cache(const std::string& path, const NetworkSpec& spec,
                                                std::uint64_t source);

}  // namespace hfmca
