#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hfmca/hierarchy.hpp"
#include "hfmca/linalg.hpp"
#include "hfmca/network.hpp"

namespace hfmca {

// Final backbone features of every image, eval mode, in chunks.
Matrix embed(Network& net, const LabeledDataset& data, std::uint64_t noise_seed, std::size_t chunk = 256);

struct KnnResult {
    std::size_t k = 0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<std::size_t> predictions;

    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

// Majority vote over the k nearest training rows (Euclidean). Equal
// distances keep the lower training index; vote ties go to the smallest class.
KnnResult knn_classify(const Matrix& train, std::span<const std::size_t> train_labels, const Matrix& test,
                       std::span<const std::size_t> test_labels, std::size_t k);

std::string knn_report(const KnnResult& result);

}  // namespace hfmca
