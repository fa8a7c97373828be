#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hfmca/checkpoint.hpp"
#include "hfmca/errors.hpp"
#include "hfmca/ops.hpp"
#include "hfmca/trainer.hpp"

using namespace hfmca;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
    TrainConfig c;
    c.batch = 8;
    c.views = 4;
    c.seed = 3;
    c.augment = {0.5, 0.5, 0.2};
    return c;
}

NetworkSpec small_spec(std::size_t noise = 2) {
    return default_network_spec(3, 4, 8, noise, 3, 4);
}

const LabeledDataset& small_data() {
    static const LabeledDataset d = generate_synthetic(32, 4, 8, 8, 1);
    return d;
}

std::vector<double> totals(const std::vector<StepRecord>& r) {
    std::vector<double> out;
    for (const auto& s : r) out.push_back(s.total);
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Applies `grad` to the single parameter and steps the optimizer.
void step_with(Optimizer& opt, Tensor p, const std::vector<double>& grad) {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor loss = frobenius_dot(p, grad);
    tape.backward(loss);
    opt.step();
}

}  // namespace

TEST(Optimizer, PlainSgd) {
    Tensor p = Tensor::parameter({3}, {1.0, 2.0, 3.0});
    OptimizerSpec s;
    s.lr = 1.0;
    s.momentum = 0.0;
    Optimizer opt(s, {{"p", p}});
    step_with(opt, p, {0.5, -1.0, 2.0});
    EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{0.5, 3.0, 1.0}));
    EXPECT_EQ(opt.steps(), 1u);
    for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Optimizer, AdamFirstStepIsSignTimesLr) {
    Tensor p = Tensor::parameter({3}, {0.0, 0.0, 0.0});
    OptimizerSpec s;
    s.kind = OptimizerSpec::Kind::adam;
    s.lr = 1e-3;
    Optimizer opt(s, {{"p", p}});
    step_with(opt, p, {0.3, -7.0, 1e-2});
    EXPECT_NEAR(p.data()[0], -1e-3, 1e-9);
    EXPECT_NEAR(p.data()[1], 1e-3, 1e-9);
    EXPECT_NEAR(p.data()[2], -1e-3, 1e-8);
}

TEST(Optimizer, MomentumVelocityConverges) {
    Tensor p = Tensor::parameter({2}, {0.0, 0.0});
    OptimizerSpec s;
    s.lr = 0.0;
    s.momentum = 0.9;
    Optimizer opt(s, {{"p", p}});
    const std::vector<double> g = {0.7, -2.0};
    for (int i = 0; i < 200; ++i) step_with(opt, p, g);
    const auto st = opt.state();
    ASSERT_EQ(st.size(), 1u);
    EXPECT_EQ(st[0].name, "p.m");
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(st[0].tensor.data()[k], g[k] / 0.1, 1e-6);
}

TEST(TrainConfig, Validation) {
    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        return c;
    };
    EXPECT_NO_THROW(TrainConfig{}.validate());
    EXPECT_THROW(bad([](TrainConfig& c) { c.use_internal = c.use_external = false; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.views = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.ridge = -1; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.beta = 1.0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.batch = 1; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.optimizer.lr = -0.1; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.optimizer.momentum = 1.0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.internal_weight = -1; }).validate(), ConfigError);

    TrainConfig u;
    u.mode = TrainMode::unsupervised;
    u.normalize();
    EXPECT_FALSE(u.use_external);
    EXPECT_NO_THROW(u.validate());
}

TEST(Trainer, SingleBlockHasNoInternalPairs) {
    NetworkSpec one = small_spec();
    one.blocks.resize(1);
    EXPECT_THROW(Trainer(small_config(), one, {&small_data(), nullptr}), ConfigError);
    TrainConfig c = small_config();
    c.batch = 64;
    EXPECT_THROW(Trainer(c, small_spec(), {&small_data(), nullptr}), ConfigError);
}

TEST(Trainer, RecordsEveryTerm) {
    Trainer t(small_config(), small_spec(), {&small_data(), nullptr});
    // Three blocks plus the pointwise top block.
    EXPECT_EQ(t.internal_pairs(), 3u);
    EXPECT_EQ(t.external_layer(), 4u);
    const StepRecord r = t.step();
    ASSERT_TRUE(r.external.has_value());
    ASSERT_TRUE(r.r1_min_eig.has_value());
    ASSERT_EQ(r.internal.size(), 3u);
    EXPECT_NEAR(r.total, *r.external + r.internal[0] + r.internal[1] + r.internal[2], 1e-12);
    EXPECT_LE(*r.external, 0.0);
    EXPECT_GT(r.grad_norm, 0.0);
    EXPECT_EQ(t.step_index(), 1u);
}

// Identical images, no augmentation, no noise: with a zero learning rate
// nothing can change between steps.
TEST(Trainer, FrozenParametersGiveIdenticalCosts) {
    const std::size_t same[] = {5, 5, 5, 5, 5, 5, 5, 5};
    const LabeledDataset d = small_data().subset(same);
    TrainConfig c = small_config();
    c.augment = {};
    c.optimizer.lr = 0.0;
    Trainer t(c, small_spec(0), {&d, nullptr});
    const auto r = t.run(3);
    EXPECT_EQ(r[0].total, r[1].total);
    EXPECT_EQ(r[1].total, r[2].total);
    EXPECT_EQ(*r[0].external, *r[2].external);
}

TEST(Trainer, Deterministic) {
    Trainer a(small_config(), small_spec(), {&small_data(), nullptr});
    Trainer b(small_config(), small_spec(), {&small_data(), nullptr});
    EXPECT_EQ(totals(a.run(5)), totals(b.run(5)));
    TrainConfig other = small_config();
    other.seed = 4;
    Trainer c(other, small_spec(), {&small_data(), nullptr});
    Trainer d(small_config(), small_spec(), {&small_data(), nullptr});
    EXPECT_NE(totals(c.run(5)), totals(d.run(5)));
}

TEST(Trainer, CostDecreasesInTrend) {
    TrainConfig c = small_config();
    c.batch = 16;
    Trainer t(c, small_spec(), {&small_data(), nullptr});
    const auto r = t.run(200);
    double first = 0.0, last = 0.0, first_ext = 0.0, last_ext = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        first += r[i].total;
        last += r[r.size() - 1 - i].total;
        first_ext += *r[i].external;
        last_ext += *r[r.size() - 1 - i].external;
    }
    EXPECT_LT(last, first);
    EXPECT_LT(last_ext, first_ext);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    Trainer t(small_config(), small_spec(), {&small_data(), nullptr});
    t.run(3);
    const fs::path a = fs::temp_directory_path() / "hfmca_test_ck_a.bin";
    const fs::path b = fs::temp_directory_path() / "hfmca_test_ck_b.bin";
    save_trainer(t, a.string());
    Trainer u(small_config(), small_spec(), {&small_data(), nullptr});
    load_trainer(u, a.string());
    EXPECT_EQ(u.step_index(), 3u);
    save_trainer(u, b.string());
    EXPECT_EQ(slurp(a), slurp(b));

    Trainer other(small_config(), default_network_spec(3, 4, 16, 2, 3, 4), {&small_data(), nullptr});
    EXPECT_THROW(load_trainer(other, a.string()), ShapeError);

    const Network n = load_network(a.string());
    EXPECT_EQ(n.spec(), small_spec());
    fs::remove(a);
    fs::remove(b);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    const fs::path p = fs::temp_directory_path() / "hfmca_test_ck_bad.bin";
    {
        std::ofstream f(p, std::ios::binary);
        f << "NOPE";
    }
    EXPECT_THROW(read_checkpoint(p.string()), IoError);
    Trainer t(small_config(), small_spec(), {&small_data(), nullptr});
    save_trainer(t, p.string());
    const std::string bytes = slurp(p);
    {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
    }
    EXPECT_THROW(read_checkpoint(p.string()), IoError);
    fs::remove(p);
    EXPECT_THROW(read_checkpoint(p.string()), IoError);
}

TEST(Checkpoint, ResumeMatchesUnbrokenRun) {
    TrainConfig c = small_config();
    c.beta = 0.5;  // filter bank state must survive the round trip as well
    c.optimizer.kind = OptimizerSpec::Kind::adam;
    c.optimizer.lr = 1e-3;
    Trainer whole(c, small_spec(), {&small_data(), nullptr});
    const auto full = whole.run(8);

    Trainer first(c, small_spec(), {&small_data(), nullptr});
    auto part = first.run(4);
    const fs::path p = fs::temp_directory_path() / "hfmca_test_ck_resume.bin";
    save_trainer(first, p.string());
    Trainer second(c, small_spec(), {&small_data(), nullptr});
    load_trainer(second, p.string());
    for (const auto& r : second.run(4)) part.push_back(r);
    fs::remove(p);

    ASSERT_EQ(part.size(), full.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
        EXPECT_EQ(part[i].step, full[i].step);
        EXPECT_EQ(part[i].total, full[i].total) << "step " << i;
        EXPECT_EQ(part[i].grad_norm, full[i].grad_norm) << "step " << i;
    }
}

TEST(MakeGroups, ModesFollowTheirSamplingRules) {
    const std::size_t idx[] = {0, 1, 2};
    TrainConfig c = small_config();
    const auto ss = make_groups(small_data(), idx, c, 0);
    ASSERT_EQ(ss.size(), 3u);
    EXPECT_EQ(ss[1].size(), 4u);
    EXPECT_EQ(ss[1].source_index, 1u);

    c.mode = TrainMode::supervised;
    for (const auto& g : make_groups(small_data(), idx, c, 0)) {
        const auto self = small_data().image(g.source_index);
        EXPECT_TRUE(std::equal(self.begin(), self.end(), g.views[0].begin()));
    }
}
