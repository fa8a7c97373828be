#include "hfmca/knn.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "hfmca/errors.hpp"
#include "hfmca/rng.hpp"

namespace hfmca {

Matrix embed(Network& net, const LabeledDataset& data, std::uint64_t noise_seed, std::size_t chunk) {
    const std::size_t k = net.spec().feature_width();
    Matrix out(data.size(), k);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(start + chunk, data.size());
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        // Noise is seeded per chunk: rows are reproducible for a fixed chunk size.
        const Tensor f = net.forward_all(image_batch(data, idx), Mode::eval, derive_seed(noise_seed, "embed", start)).features;
        std::copy(f.data().begin(), f.data().end(), out.values().begin() + static_cast<std::ptrdiff_t>(start * k));
    }
    return out;
}

KnnResult knn_classify(const Matrix& train, std::span<const std::size_t> train_labels, const Matrix& test,
                       std::span<const std::size_t> test_labels, std::size_t k) {
    if (train.rows() != train_labels.size() || test.rows() != test_labels.size())
        throw ShapeError("knn: label count does not match the feature rows");
    if (train.cols() != test.cols()) throw ShapeError("knn: train and test feature widths differ");
    if (k == 0 || k > train.rows())
        throw ConfigError("knn: k = " + std::to_string(k) + " needs 1 <= k <= train size " +
                          std::to_string(train.rows()));
    const std::size_t classes = *std::max_element(train_labels.begin(), train_labels.end()) + 1;
    const std::size_t d = train.cols();

    KnnResult r;
    r.k = k;
    r.total = test.rows();
    std::vector<std::pair<double, std::size_t>> dist(train.rows());
    std::vector<std::size_t> votes(classes);
    for (std::size_t q = 0; q < test.rows(); ++q) {
        for (std::size_t i = 0; i < train.rows(); ++i) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = test(q, c) - train(i, c);
                s += diff * diff;
            }
            dist[i] = {s, i};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        std::fill(votes.begin(), votes.end(), 0);
        for (std::size_t n = 0; n < k; ++n) ++votes[train_labels[dist[n].second]];
        const auto pred =
            static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        r.predictions.push_back(pred);
        if (pred == test_labels[q]) ++r.correct;
    }
    return r;
}

std::string knn_report(const KnnResult& result) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "# knn: k=%zu, euclidean distance, majority vote, ties to smallest class id\n"
                  "correct %zu / %zu\naccuracy %.4f\n",
                  result.k, result.correct, result.total, result.accuracy());
    return buf;
}

}  // namespace hfmca
