#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hfmca/errors.hpp"
#include "hfmca/telescope.hpp"
#include "support.hpp"

using namespace hfmca;
using hfmca::testing::random_matrix;
using hfmca::testing::random_spd;
using hfmca::testing::random_tensor;

namespace {

RatioField filled(std::size_t layer, std::size_t hl, std::size_t wl, std::size_t hu, std::size_t wu, double v) {
    RatioField f(layer, hl, wl, hu, wu);
    for (std::size_t ui = 0; ui < hu; ++ui)
        for (std::size_t uj = 0; uj < wu; ++uj)
            for (std::size_t a = 0; a < f.win_h(); ++a)
                for (std::size_t b = 0; b < f.win_w(); ++b) f.at(ui + a, uj + b, ui, uj) = v;
    return f;
}

SpectrumResult random_spectrum(std::size_t k, Rng& rng) {
    CorrStats s;
    s.r_phi = random_spd(k, rng, 0.5);
    s.r_psi = random_spd(k, rng, 0.5);
    s.p_cross = random_matrix(k, k, rng) * 0.05;
    return extract_spectrum(s, 0.0);
}

}  // namespace

TEST(RatioField, Mapping) {
    RatioField f(1, 3, 3, 3, 3);
    EXPECT_EQ(f.win_h(), 1u);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t a = 0; a < 3; ++a)
                for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(f.mapped(i, j, a, b), i == a && j == b);
    EXPECT_THROW(f.at(0, 1, 0, 0), std::out_of_range);
    EXPECT_THROW(RatioField(1, 2, 2, 3, 1), ShapeError);
}

TEST(LocalRatioField, OneByOneWindowsAreDiagonal) {
    Rng rng(1);
    const SpectrumResult sp = random_spectrum(3, rng);
    const Tensor z = random_tensor({1, 3, 4, 4}, rng, 0, 1, false);
    const RatioField f = local_ratio_field(z, z, sp, 1);
    EXPECT_EQ(f.win_h(), 1u);
    EXPECT_EQ(f.win_w(), 1u);
    EXPECT_TRUE(f.mapped(2, 3, 2, 3));
    EXPECT_FALSE(f.mapped(2, 3, 2, 2));
}

TEST(LocalRatioField, ZeroSpectrum) {
    CorrStats s;
    s.r_phi = SymMatrix(Matrix::identity(2));
    s.r_psi = SymMatrix(Matrix::identity(2));
    s.p_cross = Matrix(2, 2);
    const SpectrumResult sp = extract_spectrum(s, 0.0);
    Rng rng(2);
    const Tensor lo = random_tensor({1, 2, 3, 3}, rng, 0, 1, false);
    const Tensor up = random_tensor({1, 2, 2, 2}, rng, 0, 1, false);
    const RatioField f0 = local_ratio_field(lo, up, sp, 1);
    const RatioField f1 = local_ratio_field(lo, up, sp, 1, true);
    for (std::size_t ui = 0; ui < 2; ++ui)
        for (std::size_t uj = 0; uj < 2; ++uj)
            for (std::size_t a = 0; a < 2; ++a)
                for (std::size_t b = 0; b < 2; ++b) {
                    EXPECT_EQ(f0.at(ui + a, uj + b, ui, uj), 0.0);
                    EXPECT_EQ(f1.at(ui + a, uj + b, ui, uj), 1.0);
                }
    EXPECT_THROW(local_ratio_field(random_tensor({1, 3, 3, 3}, rng, 0, 1, false), up, sp, 1), ShapeError);
}

// phi_hat = U^T W_phi z, psi_hat = V^T W_psi z, ratio = phi_hat^T diag(sqrt sigma) psi_hat.
TEST(LocalRatioField, MatchesDirectEvaluation) {
    Rng rng(3);
    const std::size_t k = 4;
    const SpectrumResult sp = random_spectrum(k, rng);
    const Tensor lo = random_tensor({1, k, 5, 4}, rng, 0, 1, false);
    const Tensor up = random_tensor({1, k, 3, 2}, rng, 0, 1, false);
    const RatioField f = local_ratio_field(lo, up, sp, 2);
    const Matrix a = sp.u_rot.transposed() * sp.whiten_phi.matrix();
    const Matrix b = sp.v_rot.transposed() * sp.whiten_psi.matrix();
    auto column = [&](const Tensor& z, std::size_t i, std::size_t j) {
        Matrix c(k, 1);
        for (std::size_t ch = 0; ch < k; ++ch) c(ch, 0) = z.data()[(ch * z.dim(2) + i) * z.dim(3) + j];
        return c;
    };
    double worst = 0.0;
    for (std::size_t ui = 0; ui < 3; ++ui)
        for (std::size_t uj = 0; uj < 2; ++uj)
            for (std::size_t li = ui; li < ui + 3; ++li)
                for (std::size_t lj = uj; lj < uj + 3; ++lj) {
                    const Matrix ph = a * column(lo, li, lj), ps = b * column(up, ui, uj);
                    double r = 0.0;
                    for (std::size_t c = 0; c < k; ++c) r += ph(c, 0) * std::sqrt(sp.sigma[c]) * ps(c, 0);
                    worst = std::max(worst, std::abs(r - f.at(li, lj, ui, uj)));
                }
    EXPECT_LE(worst, 1e-12);
}

TEST(Propagate, CoveringCounts) {
    const auto maps = propagate({filled(1, 7, 7, 5, 5, 1.0)}, {});
    ASSERT_EQ(maps.size(), 2u);
    EXPECT_EQ(maps[0].layer, 2u);
    for (double v : maps[0].grid) EXPECT_EQ(v, 1.0);
    const ResponseMap& m = maps[1];
    EXPECT_EQ(m.h, 7u);
    EXPECT_EQ(m.at(0, 0), 1.0);
    EXPECT_EQ(m.at(6, 6), 1.0);
    EXPECT_EQ(m.at(0, 3), 3.0);
    for (std::size_t i = 2; i < 5; ++i)
        for (std::size_t j = 2; j < 5; ++j) EXPECT_EQ(m.at(i, j), 9.0);
}

TEST(Propagate, TopOneByOneGivesRatioRow) {
    RatioField f(1, 3, 3, 1, 1);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) f.at(i, j, 0, 0) = 0.5 * static_cast<double>(i) - static_cast<double>(j);
    const auto maps = propagate({f}, {});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(maps[1].at(i, j), f.at(i, j, 0, 0));
}

// Top pair 2x2 -> 1x1 with ratios 1..4; lower pair 3x3 -> 2x2 with unit
// ratios except one, so every cell is a short hand sum.
TEST(Propagate, HandComputedTwoLayers) {
    RatioField top(2, 2, 2, 1, 1);
    top.at(0, 0, 0, 0) = 1.0;
    top.at(0, 1, 0, 0) = 2.0;
    top.at(1, 0, 0, 0) = 3.0;
    top.at(1, 1, 0, 0) = 4.0;
    RatioField low = filled(1, 3, 3, 2, 2, 1.0);
    low.at(1, 1, 1, 1) = 0.5;
    const auto maps = propagate({top, low}, {{0, 1}});
    ASSERT_EQ(maps.size(), 3u);
    const ResponseMap& m = maps[2];
    const double expect[3][3] = {{1.0, 1.0 + 2.0, 2.0},
                                 {1.0 + 3.0, 1.0 + 2.0 + 3.0 + 0.5 * 4.0, 2.0 + 4.0},
                                 {3.0, 3.0 + 4.0, 4.0}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(m.at(i, j), expect[i][j], 1e-12);
}

TEST(Propagate, LinearInEachLayer) {
    Rng rng(4);
    RatioField top(2, 4, 4, 2, 2), low(1, 8, 8, 6, 6);
    for (RatioField* f : {&top, &low})
        for (std::size_t ui = 0; ui < f->upper_h(); ++ui)
            for (std::size_t uj = 0; uj < f->upper_w(); ++uj)
                for (std::size_t a = 0; a < f->win_h(); ++a)
                    for (std::size_t b = 0; b < f->win_w(); ++b) f->at(ui + a, uj + b, ui, uj) = rng.uniform(-1, 2);
    const std::vector<GridTransfer> tr = {{1, 3}};
    const auto base = propagate({top, low}, tr);
    // A power of two scales bit-exactly; other factors up to rounding.
    for (double c : {4.0, 2.5}) {
        RatioField scaled = top;
        scaled.scale(c);
        const auto moved = propagate({scaled, low}, tr);
        for (std::size_t m = 1; m < base.size(); ++m)
            for (std::size_t p = 0; p < base[m].grid.size(); ++p) {
                if (c == 4.0) {
                    EXPECT_EQ(moved[m].grid[p], c * base[m].grid[p]);
                } else {
                    EXPECT_NEAR(moved[m].grid[p], c * base[m].grid[p], 1e-13 * (1.0 + std::abs(base[m].grid[p])));
                }
            }
    }
    EXPECT_THROW(propagate({top, low}, {{0, 1}}), ShapeError);
    EXPECT_THROW(propagate({top, low}, {}), std::invalid_argument);
}

TEST(Transfer, CropsAndUnpools) {
    ResponseMap m;
    m.h = 4;
    m.w = 4;
    for (std::size_t p = 0; p < 16; ++p) m.grid.push_back(static_cast<double>(p));
    const ResponseMap t = transfer(m, {1, 2});
    EXPECT_EQ(t.h, 4u);
    EXPECT_EQ(t.w, 4u);
    const std::vector<double> expect = {5, 5, 6, 6, 5, 5, 6, 6, 9, 9, 10, 10, 9, 9, 10, 10};
    EXPECT_EQ(t.grid, expect);
    EXPECT_THROW(transfer(m, {2, 1}), ShapeError);
}

TEST(ResponseMaps, NetworkMapsAreDeterministicAndSized) {
    const NetworkSpec spec = default_network_spec(3, 4, 8, 0, 3, 4);
    Network net(spec, 5);
    Rng rng(5);
    const Tensor img = random_tensor({1, 3, 8, 8}, rng, 0, 1, false);
    const ForwardResult fw = net.forward_all(img, Mode::eval, 1);
    std::vector<SpectrumResult> spectra;
    for (std::size_t b = 1; b < spec.blocks.size(); ++b) {
        const SpectrumResult s = random_spectrum(4, rng);
        spectra.push_back(s);
        spectra.back().layer = b;
    }
    const auto maps = response_maps(net, img, spectra, 1, 7);
    ASSERT_EQ(maps.size(), spec.blocks.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const std::size_t block = spec.blocks.size() - 1 - i;
        EXPECT_EQ(maps[i].layer, block + 1);  // layers count from 1
        EXPECT_EQ(maps[i].h, fw.outputs[block].dim(2));
        EXPECT_EQ(maps[i].w, fw.outputs[block].dim(3));
        EXPECT_EQ(maps[i].image, 7u);
        for (double v : maps[i].grid) EXPECT_TRUE(std::isfinite(v));
    }
    const auto again = response_maps(net, img, spectra, 1, 7);
    for (std::size_t i = 0; i < maps.size(); ++i) EXPECT_EQ(again[i].grid, maps[i].grid);
    spectra.pop_back();
    EXPECT_THROW(response_maps(net, img, spectra, 1, 7), ConfigError);
}

TEST(Render, PercentileWindowAndFiles) {
    ResponseMap m;
    m.h = 10;
    m.w = 10;
    for (std::size_t p = 0; p < 100; ++p) m.grid.push_back(static_cast<double>(p));
    m.grid[0] = -1e6;
    set_render_window(m);
    // Linear interpolation between order statistics.
    EXPECT_NEAR(m.render_lo, 0.01 * -1e6 + 0.99 * 1.0, 1e-9);
    EXPECT_NEAR(m.render_hi, 98.01, 1e-9);

    const auto dir = std::filesystem::temp_directory_path();
    const auto pgm = (dir / "hfmca_test_map.pgm").string(), csv = (dir / "hfmca_test_map.csv").string();
    write_pgm(m, pgm);
    std::ifstream in(pgm, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    EXPECT_EQ(bytes.substr(0, 13), "P5\n10 10\n255\n");
    EXPECT_EQ(bytes.size(), 13u + 100u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[13]), 0);
    EXPECT_EQ(static_cast<unsigned char>(bytes.back()), 255);

    write_map_csv(m, csv);
    std::ifstream c(csv);
    std::string line;
    std::getline(c, line);
    EXPECT_EQ(line, "i,j,value");
    std::getline(c, line);
    EXPECT_EQ(line, "0,0,-1000000");
    std::filesystem::remove(pgm);
    std::filesystem::remove(csv);
}
