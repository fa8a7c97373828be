#include "hfmca/telescope.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hfmca/errors.hpp"
#include "hfmca/ops.hpp"

namespace hfmca {

RatioField::RatioField(std::size_t layer, std::size_t lower_h, std::size_t lower_w, std::size_t upper_h,
                       std::size_t upper_w)
    : layer_(layer), lower_h_(lower_h), lower_w_(lower_w), upper_h_(upper_h), upper_w_(upper_w) {
    if (upper_h == 0 || upper_w == 0 || upper_h > lower_h || upper_w > lower_w)
        throw ShapeError("ratio field: upper grid must be non-empty and no larger than the lower grid");
    win_h_ = lower_h - upper_h + 1;
    win_w_ = lower_w - upper_w + 1;
    values_.assign(upper_h * upper_w * win_h_ * win_w_, 0.0);
}

bool RatioField::mapped(std::size_t li, std::size_t lj, std::size_t ui, std::size_t uj) const {
    return ui < upper_h_ && uj < upper_w_ && li >= ui && li < ui + win_h_ && lj >= uj && lj < uj + win_w_;
}

std::size_t RatioField::index(std::size_t li, std::size_t lj, std::size_t ui, std::size_t uj) const {
    if (!mapped(li, lj, ui, uj))
        throw std::out_of_range("ratio field: lower (" + std::to_string(li) + "," + std::to_string(lj) +
                                ") is not in the window of upper (" + std::to_string(ui) + "," +
                                std::to_string(uj) + ")");
    return ((ui * upper_w_ + uj) * win_h_ + (li - ui)) * win_w_ + (lj - uj);
}

double RatioField::at(std::size_t li, std::size_t lj, std::size_t ui, std::size_t uj) const {
    return values_[index(li, lj, ui, uj)];
}

double& RatioField::at(std::size_t li, std::size_t lj, std::size_t ui, std::size_t uj) {
    return values_[index(li, lj, ui, uj)];
}

void RatioField::scale(double factor) {
    for (double& v : values_) v *= factor;
}

namespace {

// Normalized features of every position of a 1 x K x H x W map.
Matrix normalized_positions(const Tensor& z, const SymMatrix& whitener, const Matrix& rotation) {
    const std::size_t k = z.dim(1), hw = z.dim(2) * z.dim(3);
    Matrix rows(hw, k);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t p = 0; p < hw; ++p) rows(p, c) = z.data()[c * hw + p];
    return normalize_features(rows, whitener, rotation);
}

}  // namespace

RatioField local_ratio_field(const Tensor& z_lower, const Tensor& z_upper, const SpectrumResult& spectrum,
                             std::size_t layer, bool include_constant) {
    if (z_lower.rank() != 4 || z_upper.rank() != 4 || z_lower.dim(0) != 1 || z_upper.dim(0) != 1)
        throw ShapeError("local_ratio_field: expected single-image feature maps");
    if (z_lower.dim(1) != spectrum.whiten_phi.order() || z_upper.dim(1) != spectrum.whiten_psi.order())
        throw ShapeError("local_ratio_field: channel count does not match the spectrum");
    const std::size_t hl = z_lower.dim(2), wl = z_lower.dim(3), hu = z_upper.dim(2), wu = z_upper.dim(3);
    RatioField field(layer, hl, wl, hu, wu);
    const Matrix phi = normalized_positions(z_lower, spectrum.whiten_phi, spectrum.u_rot);
    const Matrix psi = normalized_positions(z_upper, spectrum.whiten_psi, spectrum.v_rot);
    const std::size_t k = spectrum.sigma.size();
    for (std::size_t ui = 0; ui < hu; ++ui)
        for (std::size_t uj = 0; uj < wu; ++uj) {
            const std::size_t up = ui * wu + uj;
            const std::span<const double> psi_row(&psi.values()[up * psi.cols()], k);
            for (std::size_t a = 0; a < field.win_h(); ++a)
                for (std::size_t b = 0; b < field.win_w(); ++b) {
                    const std::size_t lp = (ui + a) * wl + uj + b;
                    const std::span<const double> phi_row(&phi.values()[lp * phi.cols()], k);
                    field.at(ui + a, uj + b, ui, uj) = density_ratio(phi_row, psi_row, spectrum.sigma, include_constant);
                }
        }
    return field;
}

std::vector<ResponseMap> propagate(const std::vector<RatioField>& fields,
                                   const std::vector<GridTransfer>& transfers) {
    if (fields.empty()) throw std::invalid_argument("propagate: no ratio fields");
    if (transfers.size() + 1 < fields.size()) throw std::invalid_argument("propagate: missing grid transfers");
    std::vector<ResponseMap> maps;
    ResponseMap top;
    top.layer = fields[0].layer() + 1;
    top.h = fields[0].upper_h();
    top.w = fields[0].upper_w();
    top.grid.assign(top.h * top.w, 1.0);
    maps.push_back(top);

    std::vector<double> upper = top.grid;
    for (std::size_t f = 0; f < fields.size(); ++f) {
        const RatioField& field = fields[f];
        if (upper.size() != field.upper_h() * field.upper_w())
            throw ShapeError("propagate: response grid does not match field " + std::to_string(field.layer()));
        ResponseMap m;
        m.layer = field.layer();
        m.h = field.lower_h();
        m.w = field.lower_w();
        m.grid.assign(m.h * m.w, 0.0);
        for (std::size_t li = 0; li < m.h; ++li)
            for (std::size_t lj = 0; lj < m.w; ++lj) {
                const WindowRange up{li + 1 >= field.win_h() ? li + 1 - field.win_h() : 0,
                                     std::min(li, field.upper_h() - 1) + 1,
                                     lj + 1 >= field.win_w() ? lj + 1 - field.win_w() : 0,
                                     std::min(lj, field.upper_w() - 1) + 1};
                double s = 0.0;
                for (std::size_t ui = up.row_begin; ui < up.row_end; ++ui)
                    for (std::size_t uj = up.col_begin; uj < up.col_end; ++uj)
                        s += upper[ui * field.upper_w() + uj] * field.at(li, lj, ui, uj);
                m.grid[li * m.w + lj] = s;
            }
        maps.push_back(m);
        if (f + 1 == fields.size()) break;

        const ResponseMap moved = transfer(m, transfers[f]);
        const RatioField& next = fields[f + 1];
        if (moved.h != next.upper_h() || moved.w != next.upper_w())
            throw ShapeError("propagate: transfer does not reach the next field's grid");
        upper = moved.grid;
    }
    return maps;
}

ResponseMap transfer(const ResponseMap& m, const GridTransfer& t) {
    if (t.pool == 0) throw ShapeError("transfer: pool must be positive");
    if (m.h <= 2 * t.pad || m.w <= 2 * t.pad) throw ShapeError("transfer: padding covers the whole grid");
    ResponseMap out = m;
    out.h = (m.h - 2 * t.pad) * t.pool;
    out.w = (m.w - 2 * t.pad) * t.pool;
    out.grid.assign(out.h * out.w, 0.0);
    for (std::size_t i = 0; i < out.h; ++i)
        for (std::size_t j = 0; j < out.w; ++j)
            out.grid[i * out.w + j] = m.grid[(i / t.pool + t.pad) * m.w + j / t.pool + t.pad];
    return out;
}

std::vector<GridTransfer> network_transfers(const ScaleGeometry& geom) {
    std::vector<GridTransfer> out;
    for (std::size_t b = geom.blocks.size(); b-- > 2;)
        out.push_back({geom.blocks[b].pad, geom.blocks[b].pool_before});
    return out;
}

std::vector<ResponseMap> response_maps(Network& net, const Tensor& image,
                                       const std::vector<SpectrumResult>& spectra,
                                       std::uint64_t noise_seed, std::size_t image_id) {
    if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("response_maps: expected one image");
    const std::size_t blocks = net.spec().blocks.size();
    if (blocks < 2) throw ConfigError("response maps need at least two blocks");
    const ForwardResult fw = net.forward_all(image, Mode::eval, noise_seed);
    std::vector<RatioField> fields;
    for (std::size_t b = blocks; b-- > 1;) {
        const SpectrumResult* sp = nullptr;
        for (const auto& r : spectra)
            if (r.layer == b) sp = &r;
        if (!sp) throw ConfigError("response_maps: no spectrum for layer " + std::to_string(b));
        fields.push_back(local_ratio_field(fw.lowers[b], fw.outputs[b], *sp, b));
    }
    const ScaleGeometry geom = geometry(net.spec(), image.dim(2), image.dim(3));
    std::vector<GridTransfer> transfers = network_transfers(geom);
    transfers.push_back({geom.blocks[1].pad, geom.blocks[1].pool_before});
    std::vector<ResponseMap> maps = propagate(fields, transfers);
    for (std::size_t i = 1; i < maps.size(); ++i) maps[i] = transfer(maps[i], transfers[i - 1]);
    for (auto& m : maps) {
        m.image = image_id;
        set_render_window(m);
    }
    return maps;
}

namespace {

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - f) + v[hi] * f;
}

}  // namespace

void set_render_window(ResponseMap& map) {
    if (map.grid.empty()) throw ShapeError("render: empty map");
    map.render_lo = percentile(map.grid, 0.01);
    map.render_hi = percentile(map.grid, 0.99);
}

void write_pgm(const ResponseMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "P5\n" << map.w << ' ' << map.h << "\n255\n";
    const double span = map.render_hi - map.render_lo;
    for (double v : map.grid) {
        const double t = span > 0.0 ? std::clamp((v - map.render_lo) / span, 0.0, 1.0) : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

void write_map_csv(const ResponseMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "i,j,value\n";
    char buf[64];
    for (std::size_t i = 0; i < map.h; ++i)
        for (std::size_t j = 0; j < map.w; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", map.at(i, j));
            out << i << ',' << j << ',' << buf << '\n';
        }
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace hfmca
