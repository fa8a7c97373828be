#include "hfmca/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "hfmca/errors.hpp"
#include "hfmca/rng.hpp"

namespace hfmca {

std::span<const double> LabeledDataset::image(std::size_t i) const {
    if (i >= size()) throw std::out_of_range("dataset: image index " + std::to_string(i));
    return std::span<const double>(images).subspan(i * dims.size(), dims.size());
}

std::vector<std::size_t> LabeledDataset::members(std::size_t label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) out.push_back(i);
    return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.dims = dims;
    out.class_count = class_count;
    for (std::size_t i : indices) {
        const auto img = image(i);
        out.images.insert(out.images.end(), img.begin(), img.end());
        out.labels.push_back(labels[i]);
    }
    return out;
}

void AugmentProtocol::validate() const {
    for (double v : {crop, jitter, gray})
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("augmentation strengths must lie in [0, 1]");
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

double bilinear(const double* plane, std::size_t h, std::size_t w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    const double bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    return top * (1.0 - fy) + bot * fy;
}

void random_crop(std::vector<double>& img, ImageDims d, double strength, Rng& rng) {
    const double hs = static_cast<double>(d.h), ws = static_cast<double>(d.w);
    const double lo = 1.0 - strength * (1.0 - 1.0 / std::max(hs, ws));
    const double s = rng.uniform(lo, 1.0);
    const double ch = std::max(1.0, s * hs), cw = std::max(1.0, s * ws);
    const double y0 = rng.uniform(0.0, hs - ch), x0 = rng.uniform(0.0, ws - cw);
    // Corner-aligned: output pixel 0 samples the crop's first pixel center,
    // the last output pixel its last one.
    const double sy = d.h > 1 ? (ch - 1.0) / (hs - 1.0) : 0.0;
    const double sx = d.w > 1 ? (cw - 1.0) / (ws - 1.0) : 0.0;
    std::vector<double> out(img.size());
    for (std::size_t c = 0; c < d.c; ++c) {
        const double* plane = img.data() + c * d.h * d.w;
        for (std::size_t i = 0; i < d.h; ++i)
            for (std::size_t j = 0; j < d.w; ++j)
                out[(c * d.h + i) * d.w + j] =
                    bilinear(plane, d.h, d.w, y0 + sy * static_cast<double>(i), x0 + sx * static_cast<double>(j));
    }
    img = std::move(out);
}

void color_jitter(std::vector<double>& img, ImageDims d, double strength, Rng& rng) {
    const double spread = 0.8 * strength;
    const double fb = rng.uniform(1.0 - spread, 1.0 + spread);
    const double fc = rng.uniform(1.0 - spread, 1.0 + spread);
    const double fs = rng.uniform(1.0 - spread, 1.0 + spread);
    const double hue = rng.uniform(-0.2 * strength, 0.2 * strength);
    const std::size_t hw = d.h * d.w;

    for (double& v : img) v = clamp01(v * fb);

    double mean = 0.0;
    if (d.c == 3) {
        for (std::size_t p = 0; p < hw; ++p) mean += luma(img[p], img[hw + p], img[2 * hw + p]);
        mean /= static_cast<double>(hw);
    } else {
        for (double v : img) mean += v;
        mean /= static_cast<double>(img.size());
    }
    for (double& v : img) v = clamp01((v - mean) * fc + mean);

    if (d.c != 3) return;
    for (std::size_t p = 0; p < hw; ++p) {
        const double g = luma(img[p], img[hw + p], img[2 * hw + p]);
        for (std::size_t c = 0; c < 3; ++c) img[c * hw + p] = clamp01((img[c * hw + p] - g) * fs + g);
    }

    // Hue: rotate the chroma plane of YIQ.
    const double theta = 2.0 * std::numbers::pi * hue;
    const double cs = std::cos(theta), sn = std::sin(theta);
    for (std::size_t p = 0; p < hw; ++p) {
        const double r = img[p], g = img[hw + p], b = img[2 * hw + p];
        const double y = 0.299 * r + 0.587 * g + 0.114 * b;
        const double i = 0.596 * r - 0.274 * g - 0.322 * b;
        const double q = 0.211 * r - 0.523 * g + 0.312 * b;
        const double i2 = cs * i - sn * q, q2 = sn * i + cs * q;
        img[p] = clamp01(y + 0.956 * i2 + 0.621 * q2);
        img[hw + p] = clamp01(y - 0.272 * i2 - 0.647 * q2);
        img[2 * hw + p] = clamp01(y - 1.106 * i2 + 1.703 * q2);
    }
}

void grayscale(std::vector<double>& img, ImageDims d) {
    if (d.c != 3) return;
    const std::size_t hw = d.h * d.w;
    for (std::size_t p = 0; p < hw; ++p) {
        const double g = luma(img[p], img[hw + p], img[2 * hw + p]);
        img[p] = img[hw + p] = img[2 * hw + p] = g;
    }
}

}  // namespace

std::vector<double> augment(std::span<const double> image, ImageDims dims,
                            const AugmentProtocol& protocol, std::uint64_t seed) {
    if (image.size() != dims.size()) throw ShapeError("augment: image does not match dims");
    std::vector<double> img(image.begin(), image.end());
    Rng rng(seed);
    // Draw the gray decision first so the crop and jitter streams do not
    // shift it when their strengths change.
    const bool to_gray = protocol.gray > 0.0 && rng.uniform() < protocol.gray;
    if (protocol.crop > 0.0) random_crop(img, dims, protocol.crop, rng);
    if (protocol.jitter > 0.0) color_jitter(img, dims, protocol.jitter, rng);
    if (to_gray) grayscale(img, dims);
    return img;
}

ViewGroup sample_views(std::span<const double> image, ImageDims dims, const AugmentProtocol& protocol,
                       std::size_t views, std::uint64_t seed, std::size_t source_index,
                       std::uint64_t step) {
    if (views == 0) throw std::invalid_argument("sample_views: need at least one view");
    ViewGroup g;
    g.source_index = source_index;
    g.dims = dims;
    for (std::size_t l = 0; l < views; ++l)
        g.views.push_back(augment(image, dims, protocol, derive_seed(seed, "augment", step, source_index, l)));
    return g;
}

ViewGroup sample_same_class(const LabeledDataset& data, std::size_t index, std::size_t views,
                            std::uint64_t seed, std::uint64_t step) {
    if (views == 0) throw std::invalid_argument("sample_same_class: need at least one view");
    const auto pool = data.members(data.labels.at(index));
    if (pool.empty()) throw std::invalid_argument("sample_same_class: empty class");
    ViewGroup g;
    g.source_index = index;
    g.dims = data.dims;
    const auto self = data.image(index);
    g.views.emplace_back(self.begin(), self.end());
    Rng rng(derive_seed(seed, "same_class", step, index));
    for (std::size_t l = 1; l < views; ++l) {
        const auto img = data.image(pool[rng.below(pool.size())]);
        g.views.emplace_back(img.begin(), img.end());
    }
    return g;
}

double view_conditional(const ViewGroup& group, std::span<const double> candidate) {
    if (candidate.size() != group.dims.size()) throw ShapeError("view_conditional: dims differ");
    std::size_t hits = 0;
    for (const auto& v : group.views)
        if (std::equal(v.begin(), v.end(), candidate.begin())) ++hits;
    return static_cast<double>(hits) / static_cast<double>(group.views.size());
}

PatchSupport patch_conditional_support(std::size_t parent_h, std::size_t parent_w,
                                       std::size_t child_h, std::size_t child_w) {
    if (child_h > parent_h || child_w > parent_w)
        throw ShapeError("patch support: child patch larger than parent");
    PatchSupport s;
    const std::size_t dh = parent_h - child_h + 1, dw = parent_w - child_w + 1;
    s.count = dh * dw;
    s.probability = 1.0 / static_cast<double>(s.count);
    for (std::size_t i = 0; i < dh; ++i)
        for (std::size_t j = 0; j < dw; ++j) s.offsets.emplace_back(i, j);
    return s;
}

namespace {

bool in_shape(std::size_t kind, double dy, double dx, double r, double y, double x, double cell) {
    const double ay = std::abs(dy), ax = std::abs(dx);
    switch (kind) {
        case 0: return ay <= 0.3 * r && ax <= r;
        case 1: return dy * dy + dx * dx <= r * r;
        case 2: return (ay <= 0.25 * r && ax <= r) || (ax <= 0.25 * r && ay <= r);
        case 3: {
            const auto a = static_cast<long>(std::floor(y / cell));
            const auto b = static_cast<long>(std::floor(x / cell));
            return ((a + b) & 1) == 0;
        }
        case 4: return ax <= 0.3 * r && ay <= r;
        case 5: {
            const double d2 = dy * dy + dx * dx;
            return d2 <= r * r && d2 >= 0.3 * r * r;
        }
        case 6: return std::abs(dy - dx) <= 0.35 * r && ax <= r && ay <= r;
        default: {
            const double m = std::max(ay, ax);
            return m <= r && m >= 0.55 * r;
        }
    }
}

}  // namespace

LabeledDataset generate_synthetic(std::size_t n, std::size_t classes, std::size_t h, std::size_t w,
                                  std::uint64_t seed) {
    if (h < 8 || w < 8) throw ConfigError("synthetic data: images must be at least 8x8");
    if (classes == 0 || classes > 8) throw ConfigError("synthetic data: classes must be in 1..8");
    LabeledDataset d;
    d.dims = {3, h, w};
    d.class_count = classes;
    d.images.resize(n * d.dims.size());
    d.labels.resize(n);
    const double side = static_cast<double>(std::min(h, w));
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, "data", i));
        const std::size_t label = i % classes;
        d.labels[i] = label;
        const double r = side * rng.uniform(0.25, 0.4);
        const double cy = rng.uniform(r * 0.6, static_cast<double>(h) - r * 0.6);
        const double cx = rng.uniform(r * 0.6, static_cast<double>(w) - r * 0.6);
        const double cell = std::max(1.5, r * 0.5);
        double fg[3], bg[3];
        for (int c = 0; c < 3; ++c) {
            bg[c] = rng.uniform(0.0, 0.45);
            fg[c] = rng.uniform(0.55, 1.0);
        }
        double* img = d.images.data() + i * d.dims.size();
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
                const bool on = in_shape(label, py - cy, px - cx, r, py, px, cell);
                for (std::size_t c = 0; c < 3; ++c) {
                    const double v = (on ? fg[c] : bg[c]) + 0.03 * rng.normal();
                    img[(c * h + y) * w + x] = clamp01(v);
                }
            }
    }
    return d;
}

LabeledDataset shuffle_labels(LabeledDataset data, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "labels"));
    for (auto& l : data.labels) l = rng.below(data.class_count);
    return data;
}

LabeledDataset load_cifar10(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open CIFAR-10 file '" + path + "'");
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    constexpr std::size_t record = 3073;
    if (bytes.size() % record != 0)
        throw IoError("CIFAR-10 file '" + path + "' is truncated (" + std::to_string(bytes.size()) +
                      " bytes is not a multiple of 3073)");
    LabeledDataset d;
    d.dims = {3, 32, 32};
    d.class_count = 10;
    const std::size_t n = bytes.size() / record;
    d.images.resize(n * 3072);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* r = bytes.data() + i * record;
        if (r[0] > 9) throw IoError("CIFAR-10 record " + std::to_string(i) + " has label " + std::to_string(r[0]));
        d.labels[i] = r[0];
        for (std::size_t p = 0; p < 3072; ++p) d.images[i * 3072 + p] = static_cast<double>(r[1 + p]) / 255.0;
    }
    return d;
}

void write_cifar10(const LabeledDataset& data, const std::string& path) {
    if (!(data.dims == ImageDims{3, 32, 32})) throw ShapeError("CIFAR-10 layout requires 3x32x32 images");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] > 9) throw ShapeError("CIFAR-10 labels must be < 10");
        out.put(static_cast<char>(data.labels[i]));
        for (double v : data.image(i)) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamp01(v) * 255.0))));
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

Tensor image_batch(const LabeledDataset& data, std::span<const std::size_t> indices) {
    std::vector<double> v;
    v.reserve(indices.size() * data.dims.size());
    for (std::size_t i : indices) {
        const auto img = data.image(i);
        v.insert(v.end(), img.begin(), img.end());
    }
    return Tensor::from({indices.size(), data.dims.c, data.dims.h, data.dims.w}, std::move(v));
}

Tensor view_batch(const std::vector<ViewGroup>& groups) {
    if (groups.empty()) throw ShapeError("view_batch: no groups");
    const ImageDims d = groups[0].dims;
    const std::size_t views = groups[0].size();
    std::vector<double> v;
    v.reserve(groups.size() * views * d.size());
    for (const auto& g : groups) {
        if (!(g.dims == d) || g.size() != views) throw ShapeError("view_batch: groups differ in shape");
        for (const auto& img : g.views) v.insert(v.end(), img.begin(), img.end());
    }
    return Tensor::from({groups.size() * views, d.c, d.h, d.w}, std::move(v));
}

}  // namespace hfmca
