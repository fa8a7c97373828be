#include <gtest/gtest.h>

#include <cmath>

#include "hfmca/knn.hpp"
#include "support.hpp"

using namespace hfmca;
using hfmca::testing::random_matrix;

TEST(Knn, SelfWithKOneIsPerfect) {
    Rng rng(1);
    const Matrix x = random_matrix(50, 6, rng);
    std::vector<std::size_t> labels(50);
    for (auto& l : labels) l = rng.below(5);
    const KnnResult r = knn_classify(x, labels, x, labels, 1);
    EXPECT_EQ(r.correct, 50u);
    EXPECT_EQ(r.accuracy(), 1.0);
    EXPECT_EQ(r.predictions, labels);
}

TEST(Knn, RandomLabelsAreAtChance) {
    Rng rng(2);
    const std::size_t n = 400, m = 400, classes = 4;
    const Matrix train = random_matrix(n, 5, rng), test = random_matrix(m, 5, rng);
    std::vector<std::size_t> lt(n), ls(m);
    for (auto& l : lt) l = rng.below(classes);
    for (auto& l : ls) l = rng.below(classes);
    const double acc = knn_classify(train, lt, test, ls, 5).accuracy();
    const double p = 1.0 / classes, sd = std::sqrt(p * (1 - p) / m);
    EXPECT_NEAR(acc, p, 3.0 * sd);
}

TEST(Knn, TiesGoToSmallestClass) {
    // Test point at the origin; two neighbours of class 3 and two of class 1
    // at equal distance.
    const Matrix train = Matrix::from_rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {9, 9}});
    const std::vector<std::size_t> labels = {3, 1, 3, 1, 0};
    const Matrix test = Matrix::from_rows({{0, 0}});
    const std::vector<std::size_t> truth = {1};
    const KnnResult r = knn_classify(train, labels, test, truth, 4);
    EXPECT_EQ(r.predictions[0], 1u);
    // Equal distances keep the lower training index: k=1 picks row 0.
    EXPECT_EQ(knn_classify(train, labels, test, truth, 1).predictions[0], 3u);
}

TEST(Knn, MajorityVote) {
    const Matrix train = Matrix::from_rows({{0}, {1}, {2}, {10}, {11}});
    const std::vector<std::size_t> labels = {0, 0, 1, 1, 1};
    const Matrix test = Matrix::from_rows({{0.4}, {10.5}});
    const std::vector<std::size_t> truth = {0, 1};
    const KnnResult r = knn_classify(train, labels, test, truth, 3);
    EXPECT_EQ(r.predictions, (std::vector<std::size_t>{0, 1}));
    EXPECT_NE(knn_report(r).find("accuracy 1.0000\n"), std::string::npos);
}

TEST(Knn, Errors) {
    const Matrix train = Matrix::from_rows({{0}, {1}});
    const std::vector<std::size_t> labels = {0, 1};
    EXPECT_THROW(knn_classify(train, labels, train, labels, 3), std::invalid_argument);
    EXPECT_THROW(knn_classify(train, labels, train, labels, 0), std::invalid_argument);
    EXPECT_THROW(knn_classify(train, labels, Matrix::from_rows({{0, 1}}), labels, 1), std::invalid_argument);
}

TEST(Embed, MatchesNetworkFeatures) {
    const NetworkSpec spec = default_network_spec(3, 4, 8, 2, 2, 4);
    Network net(spec, 3);
    const LabeledDataset d = generate_synthetic(10, 2, 8, 8, 4);
    const Matrix e = embed(net, d, 9, 4);
    ASSERT_EQ(e.rows(), 10u);
    ASSERT_EQ(e.cols(), 4u);
    // Row 6 sits in the chunk starting at 4.
    const std::size_t idx[] = {4, 5, 6, 7};
    const Tensor f = net.forward_all(image_batch(d, idx), Mode::eval, derive_seed(9, "embed", 4)).features;
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(e(6, c), f.data()[2 * 4 + c]);
    EXPECT_EQ(embed(net, d, 9, 4).values()[0], e.values()[0]);
}
