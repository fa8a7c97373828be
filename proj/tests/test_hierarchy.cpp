#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hfmca/errors.hpp"
#include "hfmca/hierarchy.hpp"
#include "hfmca/rng.hpp"

using namespace hfmca;
namespace fs = std::filesystem;

namespace {

LabeledDataset small_set() { return generate_synthetic(16, 4, 8, 8, 5); }

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

// Mean squared distortion of one view against its source over 240 draws.
double distortion(const LabeledDataset& d, const AugmentProtocol& p) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::uint64_t step = 0; step < 15; ++step) {
            const ViewGroup g = sample_views(d.image(i), d.dims, p, 1, 77, i, step);
            total += sq_dist(g.views[0], d.image(i));
            ++count;
        }
    return total / static_cast<double>(count);
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("hfmca_test_" + name); }

}  // namespace

TEST(Augment, ZeroStrengthIsIdentity) {
    const LabeledDataset d = small_set();
    const ViewGroup g = sample_views(d.image(3), d.dims, AugmentProtocol{}, 4, 1, 3, 0);
    ASSERT_EQ(g.size(), 4u);
    for (const auto& v : g.views) EXPECT_TRUE(std::equal(v.begin(), v.end(), d.image(3).begin()));
    EXPECT_EQ(g.source_index, 3u);
}

TEST(Augment, FullGrayRemovesColour) {
    const LabeledDataset d = small_set();
    const ViewGroup g = sample_views(d.image(0), d.dims, AugmentProtocol{0.3, 0.5, 1.0}, 6, 2, 0, 1);
    const std::size_t plane = d.dims.h * d.dims.w;
    for (const auto& v : g.views)
        for (std::size_t p = 0; p < plane; ++p) {
            EXPECT_EQ(v[p], v[plane + p]);
            EXPECT_EQ(v[p], v[2 * plane + p]);
        }
}

TEST(Augment, DeterministicAndInRange) {
    const LabeledDataset d = small_set();
    const AugmentProtocol p{0.7, 0.8, 0.3};
    const ViewGroup a = sample_views(d.image(2), d.dims, p, 5, 9, 2, 4);
    const ViewGroup b = sample_views(d.image(2), d.dims, p, 5, 9, 2, 4);
    EXPECT_EQ(a.views, b.views);
    const ViewGroup c = sample_views(d.image(2), d.dims, p, 5, 9, 2, 5);
    EXPECT_NE(a.views, c.views);
    for (const auto& v : a.views)
        for (double x : v) {
            EXPECT_GE(x, 0.0);
            EXPECT_LE(x, 1.0);
        }
    EXPECT_THROW(sample_views(d.image(2), d.dims, p, 0, 9, 2, 4), std::invalid_argument);
}

TEST(Augment, ProtocolValidation) {
    EXPECT_THROW((AugmentProtocol{1.5, 0, 0}.validate()), ConfigError);
    EXPECT_THROW((AugmentProtocol{0, -0.1, 0}.validate()), ConfigError);
    EXPECT_THROW((AugmentProtocol{0, 0, 2}.validate()), ConfigError);
    EXPECT_NO_THROW((AugmentProtocol{1, 1, 1}.validate()));
}

TEST(Augment, DistortionGrowsWithEachDial) {
    const LabeledDataset d = small_set();
    const double levels[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int dial = 0; dial < 3; ++dial) {
        double prev = -1.0;
        for (double s : levels) {
            AugmentProtocol p;
            (dial == 0 ? p.crop : dial == 1 ? p.jitter : p.gray) = s;
            const double m = distortion(d, p);
            if (s == 0.0) {
                EXPECT_EQ(m, 0.0);
            }
            EXPECT_GE(m, prev) << "dial " << dial << " strength " << s;
            prev = m;
        }
    }
}

TEST(SameClass, Views) {
    const LabeledDataset d = small_set();
    const ViewGroup one = sample_same_class(d, 5, 1, 3, 0);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_TRUE(std::equal(one.views[0].begin(), one.views[0].end(), d.image(5).begin()));

    const ViewGroup g = sample_same_class(d, 5, 6, 3, 0);
    EXPECT_TRUE(std::equal(g.views[0].begin(), g.views[0].end(), d.image(5).begin()));
    for (const auto& v : g.views) {
        bool found = false;
        for (std::size_t m : d.members(d.labels[5]))
            found |= std::equal(v.begin(), v.end(), d.image(m).begin());
        EXPECT_TRUE(found);
    }

    const std::size_t idx[] = {7};
    const LabeledDataset single = d.subset(idx);
    const ViewGroup s = sample_same_class(single, 0, 3, 1, 0);
    for (const auto& v : s.views) EXPECT_TRUE(std::equal(v.begin(), v.end(), d.image(7).begin()));
}

TEST(ViewConditional, Counts) {
    ViewGroup g;
    g.dims = {1, 1, 2};
    const std::vector<double> a = {0.1, 0.2}, b = {0.3, 0.4}, c = {0.5, 0.6};
    g.views = {a, a, b};
    EXPECT_DOUBLE_EQ(view_conditional(g, a), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(view_conditional(g, b), 1.0 / 3.0);
    EXPECT_EQ(view_conditional(g, c), 0.0);
    EXPECT_DOUBLE_EQ(view_conditional(g, a) + view_conditional(g, b), 1.0);
    g.views = {c, c, c, c};
    EXPECT_EQ(view_conditional(g, c), 1.0);
}

TEST(PatchSupport, Enumeration) {
    const PatchSupport s = patch_conditional_support(3, 3, 2, 2);
    EXPECT_EQ(s.count, 4u);
    EXPECT_DOUBLE_EQ(s.probability, 0.25);
    EXPECT_EQ(s.offsets, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}}));

    const PatchSupport e = patch_conditional_support(5, 4, 5, 4);
    EXPECT_EQ(e.count, 1u);
    EXPECT_EQ(e.probability, 1.0);

    const PatchSupport c = patch_conditional_support(32, 32, 30, 31);
    EXPECT_EQ(c.count, 6u);
    ASSERT_EQ(c.offsets.size(), 6u);
    for (const auto& [r, col] : c.offsets) {
        EXPECT_LE(r + 30, 32u);
        EXPECT_LE(col + 31, 32u);
    }
    EXPECT_THROW(patch_conditional_support(3, 3, 4, 2), ShapeError);
}

TEST(Synthetic, BalancedDeterministicAndValid) {
    const LabeledDataset d = generate_synthetic(40, 4, 8, 8, 3);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(d.members(c).size(), 10u);
    EXPECT_EQ(d.images, generate_synthetic(40, 4, 8, 8, 3).images);
    EXPECT_NE(d.images, generate_synthetic(40, 4, 8, 8, 4).images);
    for (double v : d.images) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_THROW(generate_synthetic(4, 4, 6, 8, 1), ConfigError);
    EXPECT_THROW(generate_synthetic(4, 9, 8, 8, 1), ConfigError);
}

// Class centroids from one half, classify the other half in pixel space.
TEST(Synthetic, NearestCentroidBeatsChance) {
    const std::size_t classes = 4;
    const LabeledDataset d = generate_synthetic(400, classes, 8, 8, 11);
    const std::size_t dim = d.dims.size();
    std::vector<std::vector<double>> centroid(classes, std::vector<double>(dim, 0.0));
    std::vector<double> count(classes, 0.0);
    for (std::size_t i = 0; i < 200; ++i) {
        for (std::size_t p = 0; p < dim; ++p) centroid[d.labels[i]][p] += d.image(i)[p];
        count[d.labels[i]] += 1.0;
    }
    for (std::size_t c = 0; c < classes; ++c)
        for (double& v : centroid[c]) v /= count[c];
    std::size_t correct = 0;
    for (std::size_t i = 200; i < 400; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (sq_dist(d.image(i), centroid[c]) < sq_dist(d.image(i), centroid[best])) best = c;
        correct += best == d.labels[i];
    }
    EXPECT_GT(static_cast<double>(correct) / 200.0, 1.0 / classes);
}

TEST(Synthetic, ShuffledLabelsKeepImages) {
    const LabeledDataset d = generate_synthetic(40, 4, 8, 8, 3);
    const LabeledDataset s = shuffle_labels(d, 8);
    EXPECT_EQ(s.images, d.images);
    EXPECT_NE(s.labels, d.labels);
    for (std::size_t l : s.labels) EXPECT_LT(l, 4u);
}

TEST(Cifar, RoundTrip) {
    const LabeledDataset d = generate_synthetic(2, 4, 32, 32, 6);
    const fs::path p = temp_file("cifar_rt.bin");
    write_cifar10(d, p.string());
    EXPECT_EQ(fs::file_size(p), 2u * 3073u);
    const LabeledDataset r = load_cifar10(p.string());
    EXPECT_EQ(r.size(), 2u);
    EXPECT_EQ(r.dims, (ImageDims{3, 32, 32}));
    EXPECT_EQ(r.labels, d.labels);
    for (std::size_t i = 0; i < d.images.size(); ++i) EXPECT_NEAR(r.images[i], d.images[i], 0.5 / 255.0 + 1e-12);
    // Quantized values survive a second round trip exactly.
    write_cifar10(r, p.string());
    EXPECT_EQ(load_cifar10(p.string()).images, r.images);
    fs::remove(p);
}

TEST(Cifar, ZeroRecordAndErrors) {
    const fs::path p = temp_file("cifar_zero.bin");
    {
        std::ofstream f(p, std::ios::binary);
        const std::vector<char> zeros(3073, 0);
        f.write(zeros.data(), static_cast<std::streamsize>(zeros.size()));
    }
    const LabeledDataset z = load_cifar10(p.string());
    ASSERT_EQ(z.size(), 1u);
    EXPECT_EQ(z.labels[0], 0u);
    for (double v : z.images) EXPECT_EQ(v, 0.0);

    {
        std::ofstream f(p, std::ios::binary | std::ios::app);
        f.put('\0');
    }
    EXPECT_THROW(load_cifar10(p.string()), IoError);
    {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        std::vector<char> rec(3073, 0);
        rec[0] = 10;
        f.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
    EXPECT_THROW(load_cifar10(p.string()), IoError);
    fs::remove(p);
    EXPECT_THROW(load_cifar10(p.string()), IoError);
}

TEST(Batches, Layout) {
    const LabeledDataset d = small_set();
    const std::size_t idx[] = {3, 1};
    const Tensor t = image_batch(d, idx);
    EXPECT_EQ(t.shape(), (Shape{2, 3, 8, 8}));
    EXPECT_TRUE(std::equal(d.image(1).begin(), d.image(1).end(), t.data().begin() + 192));
    const std::vector<ViewGroup> groups = {sample_views(d.image(0), d.dims, {}, 2, 1, 0, 0),
                                           sample_views(d.image(1), d.dims, {}, 2, 1, 1, 0)};
    const Tensor v = view_batch(groups);
    EXPECT_EQ(v.shape(), (Shape{4, 3, 8, 8}));
    EXPECT_TRUE(std::equal(d.image(1).begin(), d.image(1).end(), v.data().begin() + 2 * 192));
}
