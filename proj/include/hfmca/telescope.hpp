#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hfmca/network.hpp"
#include "hfmca/spectrum.hpp"
#include "hfmca/tensor.hpp"

namespace hfmca {

// rho_hat(lower, upper) for every lower element inside an upper element's
// window. Pairs outside the windows are not represented.
class RatioField {
public:
    RatioField(std::size_t layer, std::size_t lower_h, std::size_t lower_w, std::size_t upper_h,
               std::size_t upper_w);

    std::size_t layer() const { return layer_; }
    std::size_t lower_h() const { return lower_h_; }
    std::size_t lower_w() const { return lower_w_; }
    std::size_t upper_h() const { return upper_h_; }
    std::size_t upper_w() const { return upper_w_; }
    std::size_t win_h() const { return win_h_; }
    std::size_t win_w() const { return win_w_; }

    bool mapped(std::size_t li, std::size_t lj, std::size_t ui, std::size_t uj) const;
    // Throws for unmapped pairs.
    double at(std::size_t li, std::size_t lj, std::size_t ui, std::size_t uj) const;
    double& at(std::size_t li, std::size_t lj, std::size_t ui, std::size_t uj);

    void scale(double factor);

private:
    std::size_t index(std::size_t li, std::size_t lj, std::size_t ui, std::size_t uj) const;

    std::size_t layer_;
    std::size_t lower_h_, lower_w_, upper_h_, upper_w_, win_h_, win_w_;
    std::vector<double> values_;
};

// z_lower: 1 x K x Hl x Wl, z_upper: 1 x K x Hu x Wu for a single image.
RatioField local_ratio_field(const Tensor& z_lower, const Tensor& z_upper, const SpectrumResult& spectrum,
                             std::size_t layer, bool include_constant = false);

struct ResponseMap {
    std::size_t layer = 0;
    std::size_t h = 0, w = 0;
    std::vector<double> grid;  // row-major
    std::size_t image = 0;
    double render_lo = 0.0, render_hi = 0.0;  // 1st / 99th percentile used for the heatmap

    double at(std::size_t i, std::size_t j) const { return grid[i * w + j]; }
};

// Maps a response on one field's lower grid to the next field's upper grid:
// crop the padding, then repeat every cell pool x pool times.
struct GridTransfer {
    std::size_t pad = 0;
    std::size_t pool = 1;
};

// fields[0] is the top pair, fields[i + 1] the pair below fields[i];
// transfers[i] maps fields[i]'s lower grid onto fields[i + 1]'s upper grid.
// Returns the top map of ones followed by one map per field, top down.
std::vector<ResponseMap> propagate(const std::vector<RatioField>& fields,
                                   const std::vector<GridTransfer>& transfers);

// Grid transfers between consecutive internal pairs of a network, top down.
std::vector<GridTransfer> network_transfers(const ScaleGeometry& geom);

// Crops the padding and unpools, as between consecutive fields.
ResponseMap transfer(const ResponseMap& map, const GridTransfer& t);

// Eval-mode maps for one image (1 x C x H x W): the top map followed by
// layers S-1..1, each on its block output grid. `spectra` must hold every
// internal pair.
std::vector<ResponseMap> response_maps(Network& net, const Tensor& image,
                                       const std::vector<SpectrumResult>& spectra,
                                       std::uint64_t noise_seed, std::size_t image_id);

void set_render_window(ResponseMap& map);
void write_pgm(const ResponseMap& map, const std::string& path);
void write_map_csv(const ResponseMap& map, const std::string& path);

}  // namespace hfmca
