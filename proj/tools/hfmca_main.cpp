// hfmca command line: train | spectrum | telescope | knn | oracle
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "hfmca/checkpoint.hpp"
#include "hfmca/config.hpp"
#include "hfmca/errors.hpp"
#include "hfmca/knn.hpp"
#include "hfmca/oracle.hpp"
#include "hfmca/rng.hpp"
#include "hfmca/spectrum.hpp"
#include "hfmca/telescope.hpp"
#include "hfmca/trainer.hpp"

namespace fs = std::filesystem;
using namespace hfmca;

namespace {

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> layer;
    std::size_t image = 0;
    std::size_t k = 5;
    std::string checkpoint;
    std::string checkpoint_b;
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    return f;
}

void finish(std::ofstream& f, const fs::path& path) {
    f.flush();
    if (!f) throw IoError("write to '" + path.string() + "' failed");
}

RunConfig load_config(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    RunConfig c = load_run_config(o.config);
    if (o.seed) {
        c.seed = *o.seed;
        c.train.seed = *o.seed;
    }
    return c;
}

fs::path prepare_out(const Options& o) {
    const fs::path out(o.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
    return out;
}

std::string checkpoint_path(const Options& o, const fs::path& out) {
    return o.checkpoint.empty() ? (out / "checkpoint.bin").string() : o.checkpoint;
}

// Writes through a temporary so a crash never leaves a torn checkpoint.
void save_atomic(const Trainer& trainer, const fs::path& path) {
    const fs::path tmp = path.string() + ".tmp";
    save_trainer(trainer, tmp.string());
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Network load_compatible(const std::string& path, const NetworkSpec& expected) {
    Network net = load_network(path);
    if (!(net.spec() == expected))
        throw ShapeError("checkpoint '" + path + "' does not match the network described by the config");
    return net;
}

std::vector<SpectrumResult> compute_spectra(Network& net, const RunConfig& c, const LoadedData& data) {
    std::vector<SpectrumResult> out;
    for (const auto& ls : evaluation_stats(net, c.train, data_source(data), c.spectrum_batch)) {
        SpectrumResult r = extract_spectrum(ls.stats, c.spectrum_ridge, ls.layer);
        if (r.max_raw() > 1.0 + kSpectrumWarn)
            std::cerr << "warning: layer " << r.layer << " raw eigenvalue " << num(r.max_raw())
                      << " exceeds 1, clamped\n";
        out.push_back(std::move(r));
    }
    return out;
}

int cmd_train(const Options& o) {
    const RunConfig c = load_config(o);
    const fs::path out = prepare_out(o);
    const LoadedData data = load_data(c);
    Trainer trainer(c.train, resolve_network(c, data), data_source(data));

    {
        const fs::path p = out / "config.json";
        auto f = open_out(p);
        f << to_json(c).dump(2) << '\n';
        finish(f, p);
    }
    const fs::path ckpt = out / "checkpoint.bin";
    save_atomic(trainer, ckpt);

    const std::size_t pairs = c.train.mode == TrainMode::pairwise ? 0 : trainer.network().spec().blocks.size() - 1;
    const fs::path costs_path = out / "costs.csv", diag_path = out / "diagnostics.csv",
                   trace_path = out / "spectrum_trace.csv";
    std::ofstream costs, diag, trace;
    if (c.emit.cost_trace) {
        costs = open_out(costs_path);
        costs << "step,external";
        for (std::size_t b = 1; b <= pairs; ++b) costs << ",internal_" << b;
        costs << ",total\n";
        diag = open_out(diag_path);
        diag << "step,grad_norm,r1_min_eig\n";
    }
    if (c.train.spectrum_every > 0) {
        trace = open_out(trace_path);
        trace << "step,layer,rank,eigenvalue\n";
    }

    const std::size_t save_every = 100;
    std::optional<StepRecord> last;
    try {
        trainer.run(c.train.steps, [&](const StepRecord& r) {
            if (c.emit.cost_trace) {
                costs << r.step << ',' << (r.external ? num(*r.external) : "");
                for (std::size_t b = 0; b < pairs; ++b)
                    costs << ',' << (c.train.use_internal && b < r.internal.size() ? num(r.internal[b]) : "");
                costs << ',' << num(r.total) << '\n';
                diag << r.step << ',' << num(r.grad_norm) << ',' << (r.r1_min_eig ? num(*r.r1_min_eig) : "") << '\n';
            }
            for (const auto& [layer, sigma] : r.spectra)
                for (std::size_t k = 0; k < sigma.size(); ++k)
                    trace << r.step << ',' << layer << ',' << k + 1 << ',' << num(sigma[k]) << '\n';
            if ((r.step + 1) % save_every == 0) save_atomic(trainer, ckpt);
            last = r;
        });
    } catch (const NumericalError& e) {
        if (costs.is_open()) costs.flush();
        if (diag.is_open()) diag.flush();
        if (trace.is_open()) trace.flush();
        std::cerr << "numerical failure: " << e.what() << "\nlast good checkpoint kept at " << ckpt.string() << '\n';
        return 3;
    }
    save_atomic(trainer, ckpt);
    if (costs.is_open()) {
        finish(costs, costs_path);
        finish(diag, diag_path);
    }
    if (trace.is_open()) finish(trace, trace_path);

    std::cout << "trained " << c.train.steps << " steps, " << trainer.network().parameter_count() << " parameters\n";
    if (last) {
        if (last->external) std::cout << "final external cost " << num(*last->external) << '\n';
        std::cout << "final total cost " << num(last->total) << '\n';
    }
    std::cout << "checkpoint " << ckpt.string() << '\n';
    return 0;
}

int cmd_spectrum(const Options& o) {
    const RunConfig c = load_config(o);
    const fs::path out = prepare_out(o);
    const LoadedData data = load_data(c);
    const NetworkSpec spec = resolve_network(c, data);
    const std::string path = checkpoint_path(o, out);
    Network net = load_compatible(path, spec);

    if (!o.checkpoint_b.empty()) {
        Network other = load_compatible(o.checkpoint_b, spec);
        Matrix fa, fb;
        const std::uint64_t noise = derive_seed(c.seed, "spectrum", 1);
        if (data.joint) {
            std::vector<std::size_t> xs;
            for (const auto& [x, y] : sample_pairs(*data.joint, c.spectrum_batch, derive_seed(c.seed, "spectrum")))
                xs.push_back(x);
            const Tensor input = onehot_embed(xs, data.joint->n());
            auto feats = [&](Network& n) {
                const Tensor f = n.forward_all(input, Mode::eval, noise).features;
                return Matrix(f.dim(0), f.dim(1), std::vector<double>(f.data().begin(), f.data().end()));
            };
            fa = feats(net);
            fb = feats(other);
        } else {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < std::min(c.spectrum_batch, data.train->size()); ++i) idx.push_back(i);
            const LabeledDataset batch = data.train->subset(idx);
            fa = embed(net, batch, noise);
            fb = embed(other, batch, noise);
        }
        const auto align = compare_bases(fa, fb, c.spectrum_ridge);
        const fs::path p = out / "alignment.csv";
        auto f = open_out(p);
        f << "rank,alignment\n";
        for (std::size_t k = 0; k < align.size(); ++k) f << k + 1 << ',' << num(align[k]) << '\n';
        finish(f, p);
        double mean = 0.0;
        for (double a : align) mean += a;
        std::cout << "mean alignment " << num(align.empty() ? 0.0 : mean / align.size()) << '\n';
        return 0;
    }

    const auto spectra = compute_spectra(net, c, data);
    write_spectrum_cache((out / "spectrum_cache.bin").string(), spec, file_fingerprint(path), spectra);

    nlohmann::json meta = {{"normalization", "eval"},
                           {"ridge", c.spectrum_ridge},
                           {"batch", c.spectrum_batch},
                           {"checkpoint", fs::path(path).filename().string()}};
    nlohmann::json layers = nlohmann::json::array();
    std::ostringstream csv;
    csv << "layer,rank,eigenvalue\n";
    bool any = false;
    for (const auto& r : spectra) {
        if (o.layer && *o.layer != r.layer) continue;
        any = true;
        for (std::size_t k = 0; k < r.sigma.size(); ++k) csv << r.layer << ',' << k + 1 << ',' << num(r.sigma[k]) << '\n';
        layers.push_back({{"layer", r.layer}, {"max_raw", r.max_raw()}, {"clamped", r.max_raw() > 1.0 + kSpectrumWarn}});
        std::cout << "layer " << r.layer << ":";
        for (double s : r.sigma) std::cout << ' ' << num(s);
        std::cout << '\n';
    }
    if (!any) throw ConfigError("spectrum: no layer " + std::to_string(*o.layer));
    meta["layers"] = layers;
    if (c.emit.spectrum_csv) {
        const fs::path p = out / "spectrum.csv";
        auto f = open_out(p);
        f << csv.str();
        finish(f, p);
    }
    const fs::path mp = out / "spectrum_meta.json";
    auto f = open_out(mp);
    f << meta.dump(2) << '\n';
    finish(f, mp);
    return 0;
}

int cmd_telescope(const Options& o) {
    const RunConfig c = load_config(o);
    const fs::path out = prepare_out(o);
    const LoadedData data = load_data(c);
    if (!data.train) throw ConfigError("telescope needs an image dataset");
    const NetworkSpec spec = resolve_network(c, data);
    const std::string path = checkpoint_path(o, out);
    Network net = load_compatible(path, spec);
    const std::size_t blocks = spec.blocks.size();
    if (blocks < 2) throw ConfigError("telescope needs at least two blocks");
    const std::size_t layer = o.layer.value_or(std::min<std::size_t>(2, blocks));
    if (layer > blocks) throw ConfigError("telescope: layer must lie in 0.." + std::to_string(blocks));
    if (o.image >= data.train->size())
        throw ConfigError("telescope: image " + std::to_string(o.image) + " out of range (dataset has " +
                          std::to_string(data.train->size()) + ")");

    const fs::path cache = out / "spectrum_cache.bin";
    const std::uint64_t fp = file_fingerprint(path);
    auto spectra = read_spectrum_cache(cache.string(), spec, fp);
    if (spectra.empty()) {
        std::cerr << "warning: no spectrum cache for this checkpoint in " << out.string() << ", computing it\n";
        spectra = compute_spectra(net, c, data);
        write_spectrum_cache(cache.string(), spec, fp, spectra);
    }

    const std::size_t idx[] = {o.image};
    const auto maps = response_maps(net, image_batch(*data.train, idx), spectra,
                                    derive_seed(c.seed, "telescope"), o.image);
    for (const auto& m : maps) {
        if (layer != 0 && m.layer != layer) continue;
        const std::string stem = "response_layer" + std::to_string(m.layer) + "_image" + std::to_string(o.image);
        write_map_csv(m, (out / (stem + ".csv")).string());
        if (c.emit.response_maps) write_pgm(m, (out / (stem + ".pgm")).string());
        std::cout << "layer " << m.layer << ": " << m.h << "x" << m.w << " window [" << num(m.render_lo) << ", "
                  << num(m.render_hi) << "]\n";
    }
    return 0;
}

int cmd_knn(const Options& o) {
    const RunConfig c = load_config(o);
    const fs::path out = prepare_out(o);
    const LoadedData data = load_data(c);
    if (!data.train) throw ConfigError("knn needs a labeled image dataset");
    const NetworkSpec spec = resolve_network(c, data);
    Network net = load_compatible(checkpoint_path(o, out), spec);
    const LabeledDataset& test = data.test ? *data.test : *data.train;
    const std::uint64_t noise = derive_seed(c.seed, "knn");
    const Matrix train_f = embed(net, *data.train, noise);
    const Matrix test_f = embed(net, test, noise);
    const KnnResult r = knn_classify(train_f, data.train->labels, test_f, test.labels, o.k);
    const std::string report = knn_report(r);
    const fs::path p = out / "knn.txt";
    auto f = open_out(p);
    f << report;
    finish(f, p);
    std::cout << report;
    return 0;
}

void write_basis(const Matrix& basis, const fs::path& p) {
    auto f = open_out(p);
    f << "symbol,rank,value\n";
    for (std::size_t x = 0; x < basis.rows(); ++x)
        for (std::size_t k = 0; k < basis.cols(); ++k) f << x << ',' << k + 1 << ',' << num(basis(x, k)) << '\n';
    finish(f, p);
}

int cmd_oracle(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required (joint CSV or oracle JSON)");
    const fs::path out = prepare_out(o);
    std::ostringstream report;

    auto report_table = [&](const JointTable& joint) {
        const ExactDecomposition d = exact_decompose(joint);
        auto f = open_out(out / "oracle_sigma.csv");
        f << "rank,eigenvalue\n";
        report << "sigma:";
        for (std::size_t k = 0; k < d.sigma.size(); ++k) {
            f << k + 1 << ',' << num(d.sigma[k]) << '\n';
            report << ' ' << num(d.sigma[k]);
        }
        report << '\n';
        finish(f, out / "oracle_sigma.csv");
        write_basis(d.phi, out / "oracle_phi.csv");
        write_basis(d.psi, out / "oracle_psi.csv");
    };

    if (fs::path(o.config).extension() == ".csv") {
        report_table(read_joint_csv(o.config));
    } else {
        std::ifstream in(o.config);
        if (!in) throw IoError("cannot open '" + o.config + "'");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(std::string("oracle config is not valid JSON: ") + e.what());
        }
        if (!j.is_object() || j.size() != 1 || !(j.contains("table") || j.contains("path") || j.contains("chain")))
            throw ConfigError("oracle config needs exactly one of 'table', 'path' or 'chain'");
        if (j.contains("path")) {
            report_table(read_joint_csv(j["path"].get<std::string>()));
        } else if (j.contains("table")) {
            const auto rows = j["table"].get<std::vector<std::vector<double>>>();
            if (rows.empty() || rows[0].empty()) throw ConfigError("oracle: empty table");
            std::vector<double> p;
            for (const auto& r : rows) {
                if (r.size() != rows[0].size()) throw ConfigError("oracle: table rows differ in length");
                p.insert(p.end(), r.begin(), r.end());
            }
            report_table(JointTable(rows.size(), rows[0].size(), std::move(p)));
        } else {
            const auto& ch = j["chain"];
            for (const auto& [key, v] : ch.items())
                if (key != "alphabets" && key != "views" && key != "seed")
                    throw ConfigError("oracle chain: unknown key '" + key + "'");
            const auto alphabets = ch.at("alphabets").get<std::vector<std::size_t>>();
            const std::size_t views = ch.value("views", std::size_t{4});
            const std::uint64_t seed = o.seed.value_or(ch.value("seed", std::uint64_t{0}));
            const ChainJoint joint = chain_joint(definition1_chain(alphabets, views, seed));
            auto f = open_out(out / "oracle_chain.csv");
            f << "level,rank,eigenvalue\n";
            for (std::size_t s = 0; s + 1 < joint.alphabets.size(); ++s) {
                const ExactDecomposition d = exact_decompose(joint.pair(s));
                report << "levels " << s << "-" << s + 1 << " sigma:";
                for (std::size_t k = 0; k < d.sigma.size(); ++k) {
                    f << s << ',' << k + 1 << ',' << num(d.sigma[k]) << '\n';
                    report << ' ' << num(d.sigma[k]);
                }
                report << '\n';
            }
            finish(f, out / "oracle_chain.csv");
            report << "telescoping defect " << num(telescoping_check(joint)) << '\n';
        }
    }
    auto f = open_out(out / "oracle_report.txt");
    f << report.str();
    finish(f, out / "oracle_report.txt");
    std::cout << report.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Hierarchical functional maximal correlation: training and analysis"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    std::size_t layer = 0;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "run config (JSON)");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--checkpoint", o.checkpoint, "checkpoint (default <out>/checkpoint.bin)");
    };
    auto* train = app.add_subcommand("train", "train a network, write checkpoint and cost trace");
    common(train);
    auto* spectrum = app.add_subcommand("spectrum", "eigenspectrum per layer pair, or cross-model alignment");
    common(spectrum);
    spectrum->add_option("--layer", layer, "only this layer");
    spectrum->add_option("--checkpoint-b", o.checkpoint_b, "second checkpoint for cross-model alignment");
    auto* telescope = app.add_subcommand("telescope", "local density-ratio response maps for one image");
    common(telescope);
    telescope->add_option("--layer", layer, "layer to emit, 0 for all (default 2)");
    telescope->add_option("--image", o.image, "training image index");
    auto* knn = app.add_subcommand("knn", "k-nearest-neighbour accuracy of the final features");
    common(knn);
    knn->add_option("--k", o.k, "neighbours")->check(CLI::PositiveNumber);
    auto* oracle = app.add_subcommand("oracle", "exact spectrum of a joint table or Markov chain");
    common(oracle);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    for (auto* sub : {train, spectrum, telescope, knn, oracle})
        if (sub->count("--seed")) o.seed = seed;
    for (auto* sub : {spectrum, telescope})
        if (sub->count("--layer")) o.layer = layer;

    try {
        if (*train) return cmd_train(o);
        if (*spectrum) return cmd_spectrum(o);
        if (*telescope) return cmd_telescope(o);
        if (*knn) return cmd_knn(o);
        if (*oracle) return cmd_oracle(o);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 4;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
