#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hfmca/tensor.hpp"

namespace hfmca {

struct ImageDims {
    std::size_t c = 3, h = 0, w = 0;
    std::size_t size() const { return c * h * w; }
    bool operator==(const ImageDims&) const = default;
};

struct LabeledDataset {
    ImageDims dims;
    std::vector<double> images;  // N x C x H x W, values in [0, 1]
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
    std::span<const double> image(std::size_t i) const;
    // Indices of the images carrying `label`, ascending.
    std::vector<std::size_t> members(std::size_t label) const;
    LabeledDataset subset(std::span<const std::size_t> indices) const;
};

struct AugmentProtocol {
    double crop = 0.0;    // 0: no crop, 1: crops down to a single pixel
    double jitter = 0.0;  // color jitter strength
    double gray = 0.0;    // probability of full grayscale conversion

    void validate() const;
};

struct ViewGroup {
    std::size_t source_index = 0;
    ImageDims dims;
    std::vector<std::vector<double>> views;

    std::size_t size() const { return views.size(); }
};

// One augmentation of `image`; a pure function of (seed, source, step, view).
std::vector<double> augment(std::span<const double> image, ImageDims dims,
                            const AugmentProtocol& protocol, std::uint64_t seed);

ViewGroup sample_views(std::span<const double> image, ImageDims dims, const AugmentProtocol& protocol,
                       std::size_t views, std::uint64_t seed, std::size_t source_index,
                       std::uint64_t step);

// View 0 is the image itself, the rest are drawn with replacement from its class.
ViewGroup sample_same_class(const LabeledDataset& data, std::size_t index, std::size_t views,
                            std::uint64_t seed, std::uint64_t step);

// (1/L) #{l : view_l == candidate}
double view_conditional(const ViewGroup& group, std::span<const double> candidate);

struct PatchSupport {
    std::size_t count = 0;
    std::vector<std::pair<std::size_t, std::size_t>> offsets;  // row, col, row-major
    double probability = 0.0;
};

PatchSupport patch_conditional_support(std::size_t parent_h, std::size_t parent_w,
                                       std::size_t child_h, std::size_t child_w);

// Procedural shapes (bars, discs, crosses, checkers, ...) with random
// colors and placement; label i % classes.
LabeledDataset generate_synthetic(std::size_t n, std::size_t classes, std::size_t h, std::size_t w,
                                  std::uint64_t seed);

// Same label for every image drawn uniformly at random: the chance-level null.
LabeledDataset shuffle_labels(LabeledDataset data, std::uint64_t seed);

LabeledDataset load_cifar10(const std::string& path);
void write_cifar10(const LabeledDataset& data, const std::string& path);

// Stacks images (in the given order) into an N x C x H x W tensor.
Tensor image_batch(const LabeledDataset& data, std::span<const std::size_t> indices);
// Stacks the views of every group, group-major, into a (B L) x C x H x W tensor.
Tensor view_batch(const std::vector<ViewGroup>& groups);

}  // namespace hfmca
