#include "hfmca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hfmca/errors.hpp"
#include "hfmca/trainer.hpp"

namespace hfmca {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const Tensor* CheckpointData::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t.tensor;
    return nullptr;
}

namespace {

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw IoError("checkpoint '" + path + "' is truncated");
    return v;
}

std::string get_string(std::istream& in, std::size_t n, const std::string& path) {
    if (n > (1u << 26)) throw IoError("checkpoint '" + path + "' is corrupt (oversized field)");
    std::string s(n, '\0');
    if (n && !in.read(s.data(), static_cast<std::streamsize>(n)))
        throw IoError("checkpoint '" + path + "' is truncated");
    return s;
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write("HFMC", 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string spec = to_json(data.spec).dump();
    put<std::uint64_t>(out, spec.size());
    out.write(spec.data(), static_cast<std::streamsize>(spec.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(data.tensors.size()));
    for (const auto& [name, t] : data.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
        const auto v = t.data();
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw IoError("write to checkpoint '" + path + "' failed");
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "HFMC", 4) != 0)
        throw IoError("'" + path + "' is not a checkpoint (bad magic)");
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw IoError("checkpoint '" + path + "' has format version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion));
    CheckpointData data;
    const auto spec_len = get<std::uint64_t>(in, path);
    const std::string spec = get_string(in, spec_len, path);
    try {
        data.spec = network_spec_from_json(nlohmann::json::parse(spec));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint '" + path + "' has a corrupt network spec: " + e.what());
    }
    const auto count = get<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = get_string(in, get<std::uint32_t>(in, path), path);
        const auto rank = get<std::uint32_t>(in, path);
        if (rank > 8) throw IoError("checkpoint '" + path + "' is corrupt (rank " + std::to_string(rank) + ")");
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape.push_back(get<std::uint64_t>(in, path));
            numel *= shape.back();
        }
        if (numel > (1u << 28)) throw IoError("checkpoint '" + path + "' is corrupt (tensor too large)");
        std::vector<double> v(numel);
        if (numel && !in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(numel * sizeof(double))))
            throw IoError("checkpoint '" + path + "' is truncated");
        nt.tensor = Tensor::from(std::move(shape), std::move(v));
        data.tensors.push_back(std::move(nt));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint '" + path + "' has trailing bytes");
    return data;
}

CheckpointData trainer_state(const Trainer& trainer) {
    CheckpointData data;
    data.spec = trainer.network().spec();
    for (const auto& p : trainer.network().parameters())
        data.tensors.push_back({"param/" + p.name, p.tensor.detached()});
    for (const auto& b : trainer.network().buffers()) data.tensors.push_back({"buffer/" + b.name, b.tensor});
    for (const auto& o : trainer.optimizer().state()) data.tensors.push_back({"opt/" + o.name, o.tensor});
    for (const auto& [slot, s] : trainer.bank().slots()) {
        const std::string key = std::to_string(slot);
        data.tensors.push_back({"bank/" + key + "/joint",
                                Tensor::from({s.joint_tilde.rows(), s.joint_tilde.cols()},
                                             std::vector<double>(s.joint_tilde.values().begin(),
                                                                 s.joint_tilde.values().end()))});
        data.tensors.push_back({"bank/" + key + "/steps", Tensor::from({1}, {static_cast<double>(s.steps)})});
    }
    data.tensors.push_back({"trainer/step", Tensor::from({1}, {static_cast<double>(trainer.step_index())})});
    data.tensors.push_back(
        {"trainer/optimizer_steps", Tensor::from({1}, {static_cast<double>(trainer.optimizer().steps())})});
    return data;
}

void save_trainer(const Trainer& trainer, const std::string& path) { write_checkpoint(path, trainer_state(trainer)); }

namespace {

void restore_network(Network& net, const CheckpointData& data, const std::string& path) {
    for (auto& p : net.parameters()) {
        const Tensor* t = data.find("param/" + p.name);
        if (!t || t->shape() != p.tensor.shape())
            throw ShapeError("checkpoint '" + path + "': parameter '" + p.name + "' missing or mismatched");
        auto dst = p.tensor.mutable_data();
        std::copy(t->data().begin(), t->data().end(), dst.begin());
    }
    std::vector<NamedTensor> buffers;
    for (const auto& b : net.buffers()) {
        const Tensor* t = data.find("buffer/" + b.name);
        if (!t) throw ShapeError("checkpoint '" + path + "': buffer '" + b.name + "' missing");
        buffers.push_back({b.name, *t});
    }
    net.load_buffers(buffers);
}

std::uint64_t counter(const CheckpointData& data, const std::string& name, const std::string& path) {
    const Tensor* t = data.find(name);
    if (!t || t->numel() != 1) throw IoError("checkpoint '" + path + "': missing '" + name + "'");
    return static_cast<std::uint64_t>(t->item());
}

}  // namespace

void load_trainer(Trainer& trainer, const std::string& path) {
    const CheckpointData data = read_checkpoint(path);
    if (!(data.spec == trainer.network().spec()))
        throw ShapeError("checkpoint '" + path + "' was written for a different network spec");
    restore_network(trainer.network(), data, path);

    std::vector<NamedTensor> opt;
    for (const auto& t : data.tensors)
        if (t.name.rfind("opt/", 0) == 0) opt.push_back({t.name.substr(4), t.tensor});
    trainer.optimizer().load_state(opt, counter(data, "trainer/optimizer_steps", path));

    for (const auto& t : data.tensors) {
        if (t.name.rfind("bank/", 0) != 0 || t.name.size() < 6 || t.name.ends_with("/steps")) continue;
        const std::string key = t.name.substr(5, t.name.find('/', 5) - 5);
        AcfFilterBank::Slot slot;
        slot.joint_tilde = Matrix(t.tensor.dim(0), t.tensor.dim(1),
                                  std::vector<double>(t.tensor.data().begin(), t.tensor.data().end()));
        slot.steps = counter(data, "bank/" + key + "/steps", path);
        trainer.bank().restore(std::stoul(key), std::move(slot));
    }
    trainer.set_step_index(counter(data, "trainer/step", path));
}

Network load_network(const std::string& path) {
    const CheckpointData data = read_checkpoint(path);
    Network net(data.spec, 0);
    restore_network(net, data, path);
    return net;
}

std::uint64_t file_fingerprint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

namespace {

Tensor matrix_tensor(const Matrix& m) {
    return Tensor::from({m.rows(), m.cols()}, std::vector<double>(m.values().begin(), m.values().end()));
}

Matrix tensor_matrix(const Tensor& t) {
    if (t.rank() != 2) throw IoError("spectrum cache: expected a matrix");
    return Matrix(t.dim(0), t.dim(1), std::vector<double>(t.data().begin(), t.data().end()));
}

}  // namespace

void write_spectrum_cache(const std::string& path, const NetworkSpec& spec, std::uint64_t source,
                          const std::vector<SpectrumResult>& spectra) {
    CheckpointData data;
    data.spec = spec;
    data.tensors.push_back({"source", Tensor::from({2}, {static_cast<double>(source >> 32),
                                                         static_cast<double>(source & 0xffffffffu)})});
    for (const auto& r : spectra) {
        const std::string key = "spectrum/" + std::to_string(r.layer) + "/";
        data.tensors.push_back({key + "sigma", Tensor::from({r.sigma.size()}, r.sigma)});
        data.tensors.push_back({key + "raw", Tensor::from({r.raw_sigma.size()}, r.raw_sigma)});
        data.tensors.push_back({key + "u", matrix_tensor(r.u_rot)});
        data.tensors.push_back({key + "v", matrix_tensor(r.v_rot)});
        data.tensors.push_back({key + "wphi", matrix_tensor(r.whiten_phi)});
        data.tensors.push_back({key + "wpsi", matrix_tensor(r.whiten_psi)});
        data.tensors.push_back({key + "ridge", Tensor::from({1}, {r.ridge})});
    }
    write_checkpoint(path, data);
}

std::vector<SpectrumResult> read_spectrum_cache(const std::string& path, const NetworkSpec& spec,
                                                std::uint64_t source) {
    if (!std::ifstream(path)) return {};
    const CheckpointData data = read_checkpoint(path);
    const Tensor* src = data.find("source");
    if (!(data.spec == spec) || !src || src->numel() != 2) return {};
    const auto hi = static_cast<std::uint64_t>(src->data()[0]), lo = static_cast<std::uint64_t>(src->data()[1]);
    if (((hi << 32) | lo) != source) return {};
    std::vector<SpectrumResult> out;
    for (const auto& t : data.tensors) {
        if (!t.name.starts_with("spectrum/") || !t.name.ends_with("/sigma")) continue;
        const std::string key = t.name.substr(0, t.name.size() - 5);
        auto need = [&](const std::string& name) {
            const Tensor* x = data.find(key + name);
            if (!x) throw IoError("spectrum cache '" + path + "': missing '" + key + name + "'");
            return *x;
        };
        SpectrumResult r;
        r.layer = std::stoul(key.substr(9));
        r.sigma.assign(t.tensor.data().begin(), t.tensor.data().end());
        const Tensor raw = need("raw");
        r.raw_sigma.assign(raw.data().begin(), raw.data().end());
        r.u_rot = tensor_matrix(need("u"));
        r.v_rot = tensor_matrix(need("v"));
        r.whiten_phi = tensor_matrix(need("wphi"));
        r.whiten_psi = tensor_matrix(need("wpsi"));
        r.ridge = need("ridge").item();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace hfmca
