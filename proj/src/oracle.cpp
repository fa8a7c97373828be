#include "hfmca/oracle.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "hfmca/errors.hpp"
#include "hfmca/rng.hpp"

namespace hfmca {

JointTable::JointTable(std::size_t n, std::size_t m, std::vector<double> p)
    : n_(n), m_(m), p_(std::move(p)), px_(n, 0.0), py_(m, 0.0) {
    if (n == 0 || m == 0 || p_.size() != n * m) throw ShapeError("joint table: dims do not match values");
    double total = 0.0;
    for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < m; ++y) {
            const double v = p_[x * m + y];
            if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("joint table: negative or non-finite mass");
            px_[x] += v;
            py_[y] += v;
            total += v;
        }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("joint table: masses sum to " + std::to_string(total) + ", not 1");
    for (double v : px_)
        if (!(v > 0.0)) throw std::invalid_argument("joint table: zero marginal on x");
    for (double v : py_)
        if (!(v > 0.0)) throw std::invalid_argument("joint table: zero marginal on y");
}

double JointTable::ratio(std::size_t x, std::size_t y) const {
    return (*this)(x, y) / (px_[x] * py_[y]);
}

ExactDecomposition exact_decompose(const JointTable& joint) {
    const bool flip = joint.n() < joint.m();
    const std::size_t rows = flip ? joint.m() : joint.n();
    const std::size_t cols = flip ? joint.n() : joint.m();
    // Q(x, y) = p(x, y) / sqrt(p(x) p(y)), tall orientation, zero-padded square.
    Matrix q(rows, rows);
    for (std::size_t x = 0; x < joint.n(); ++x)
        for (std::size_t y = 0; y < joint.m(); ++y) {
            const double v = joint(x, y) / std::sqrt(joint.px()[x] * joint.py()[y]);
            if (flip)
                q(y, x) = v;
            else
                q(x, y) = v;
        }
    const SvdResult svd = svd_small(q);
    const Matrix& left = flip ? svd.v : svd.u;
    const Matrix& right = flip ? svd.u : svd.v;

    ExactDecomposition d;
    d.phi = Matrix(joint.n(), cols);
    d.psi = Matrix(joint.m(), cols);
    for (std::size_t k = 0; k < cols; ++k) {
        const double s = svd.singular_values[k];
        d.sigma.push_back(s * s);
        double sign = 1.0;
        for (std::size_t x = 0; x < joint.n(); ++x)
            if (std::abs(left(x, k)) > 1e-12) {
                sign = left(x, k) > 0.0 ? 1.0 : -1.0;
                break;
            }
        for (std::size_t x = 0; x < joint.n(); ++x) d.phi(x, k) = sign * left(x, k) / std::sqrt(joint.px()[x]);
        for (std::size_t y = 0; y < joint.m(); ++y) d.psi(y, k) = sign * right(y, k) / std::sqrt(joint.py()[y]);
    }
    return d;
}

double reconstruct_ratio(const ExactDecomposition& d, std::size_t x, std::size_t y) {
    double r = 0.0;
    for (std::size_t k = 0; k < d.sigma.size(); ++k) r += std::sqrt(d.sigma[k]) * d.phi(x, k) * d.psi(y, k);
    return r;
}

std::vector<std::size_t> ChainSpec::alphabets() const {
    std::vector<std::size_t> a{root.size()};
    for (const Matrix& k : kernels) a.push_back(k.cols());
    return a;
}

std::vector<double> ChainJoint::marginal(std::size_t level) const {
    if (level >= alphabets.size()) throw std::out_of_range("chain: level out of range");
    std::size_t inner = 1;
    for (std::size_t s = level + 1; s < alphabets.size(); ++s) inner *= alphabets[s];
    std::vector<double> out(alphabets[level], 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) out[(i / inner) % alphabets[level]] += p[i];
    return out;
}

JointTable ChainJoint::pair(std::size_t level) const {
    if (level + 1 >= alphabets.size()) throw std::out_of_range("chain: no level above");
    std::size_t inner = 1;
    for (std::size_t s = level + 2; s < alphabets.size(); ++s) inner *= alphabets[s];
    const std::size_t a = alphabets[level], b = alphabets[level + 1];
    std::vector<double> out(a * b, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const std::size_t y = (i / inner) % b;
        const std::size_t x = (i / (inner * b)) % a;
        out[x * b + y] += p[i];
    }
    // Marginals of a chain may vanish on unused symbols; drop them would change
    // indexing, so callers only build tables where every symbol is reachable.
    double total = 0.0;
    for (double v : out) total += v;
    for (double& v : out) v /= total;
    return JointTable(a, b, std::move(out));
}

ChainJoint chain_joint(const ChainSpec& spec) {
    if (spec.root.empty()) throw std::invalid_argument("chain: empty root distribution");
    const auto alpha = spec.alphabets();
    std::size_t states = 1;
    for (std::size_t a : alpha) {
        if (states > kMaxChainStates / a)
            throw std::invalid_argument("chain: more than " + std::to_string(kMaxChainStates) + " joint states");
        states *= a;
    }
    double rs = 0.0;
    for (double v : spec.root) {
        if (v < 0.0) throw std::invalid_argument("chain: negative root mass");
        rs += v;
    }
    if (std::abs(rs - 1.0) > 1e-12) throw std::invalid_argument("chain: root does not sum to 1");
    for (std::size_t s = 0; s < spec.kernels.size(); ++s) {
        const Matrix& k = spec.kernels[s];
        if (k.rows() != alpha[s]) throw ShapeError("chain: kernel " + std::to_string(s) + " has wrong row count");
        for (std::size_t i = 0; i < k.rows(); ++i) {
            double t = 0.0;
            for (std::size_t j = 0; j < k.cols(); ++j) {
                if (k(i, j) < 0.0) throw std::invalid_argument("chain: negative kernel entry");
                t += k(i, j);
            }
            if (std::abs(t - 1.0) > 1e-12) throw std::invalid_argument("chain: kernel row does not sum to 1");
        }
    }

    ChainJoint out;
    out.alphabets = alpha;
    out.p = spec.root;
    for (std::size_t s = 0; s < spec.kernels.size(); ++s) {
        const Matrix& k = spec.kernels[s];
        std::vector<double> next(out.p.size() * k.cols());
        for (std::size_t i = 0; i < out.p.size(); ++i) {
            const std::size_t last = i % alpha[s];
            for (std::size_t j = 0; j < k.cols(); ++j) next[i * k.cols() + j] = out.p[i] * k(last, j);
        }
        out.p = std::move(next);
    }
    return out;
}

ChainSpec definition1_chain(std::span<const std::size_t> alphabets, std::size_t views,
                            std::uint64_t seed) {
    if (alphabets.size() < 2) throw std::invalid_argument("chain: need at least two levels");
    if (views == 0) throw std::invalid_argument("chain: views must be positive");
    Rng rng(derive_seed(seed, "chain"));
    ChainSpec spec;
    spec.root.resize(alphabets[0]);
    double total = 0.0;
    for (double& v : spec.root) {
        v = 0.2 + rng.uniform();
        total += v;
    }
    for (double& v : spec.root) v /= total;
    for (std::size_t s = 0; s + 1 < alphabets.size(); ++s) {
        const std::size_t a = alphabets[s], b = alphabets[s + 1];
        Matrix k(a, b);
        // Every lower symbol is reachable: symbol j is guaranteed as a
        // component of upper symbol j % a.
        for (std::size_t i = 0; i < a; ++i) {
            std::vector<std::size_t> parts;
            for (std::size_t j = i; j < b; j += a) parts.push_back(j);
            while (parts.size() < views) parts.push_back(rng.below(b));
            for (std::size_t j : parts) k(i, j) += 1.0 / static_cast<double>(parts.size());
        }
        spec.kernels.push_back(k);
    }
    return spec;
}

double telescoping_check(const ChainJoint& joint) {
    const std::size_t levels = joint.alphabets.size();
    std::vector<std::vector<double>> marg;
    for (std::size_t s = 0; s < levels; ++s) marg.push_back(joint.marginal(s));
    std::vector<std::vector<double>> pairs;
    for (std::size_t s = 0; s + 1 < levels; ++s) {
        std::size_t inner = 1;
        for (std::size_t t = s + 2; t < levels; ++t) inner *= joint.alphabets[t];
        const std::size_t a = joint.alphabets[s], b = joint.alphabets[s + 1];
        std::vector<double> pr(a * b, 0.0);
        for (std::size_t i = 0; i < joint.p.size(); ++i)
            pr[((i / (inner * b)) % a) * b + (i / inner) % b] += joint.p[i];
        pairs.push_back(std::move(pr));
    }

    double worst = 0.0;
    std::vector<std::size_t> x(levels);
    for (std::size_t i = 0; i < joint.p.size(); ++i) {
        if (joint.p[i] <= 0.0) continue;
        std::size_t rest = i;
        for (std::size_t s = levels; s-- > 0;) {
            x[s] = rest % joint.alphabets[s];
            rest /= joint.alphabets[s];
        }
        double lhs = std::log(joint.p[i]);
        for (std::size_t s = 0; s < levels; ++s) {
            if (!(marg[s][x[s]] > 0.0)) throw NumericalError("telescoping: zero marginal on the support");
            lhs -= std::log(marg[s][x[s]]);
        }
        double rhs = 0.0;
        for (std::size_t s = 0; s + 1 < levels; ++s) {
            const double pj = pairs[s][x[s] * joint.alphabets[s + 1] + x[s + 1]];
            if (!(pj > 0.0)) throw NumericalError("telescoping: zero pair mass on the support");
            rhs += std::log(pj) - std::log(marg[s][x[s]]) - std::log(marg[s + 1][x[s + 1]]);
        }
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

Tensor onehot_embed(std::span<const std::size_t> symbols, std::size_t n) {
    std::vector<double> v(symbols.size() * n, 0.0);
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (symbols[i] >= n)
            throw std::out_of_range("onehot: symbol " + std::to_string(symbols[i]) + " outside alphabet of " +
                                    std::to_string(n));
        v[i * n + symbols[i]] = 1.0;
    }
    return Tensor::from({symbols.size(), n, 1, 1}, std::move(v));
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(const JointTable& joint,
                                                              std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    const auto p = joint.values();
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = rng.uniform();
        double acc = 0.0;
        std::size_t cell = p.size() - 1;
        for (std::size_t c = 0; c < p.size(); ++c) {
            acc += p[c];
            if (u < acc) {
                cell = c;
                break;
            }
        }
        out.emplace_back(cell / joint.m(), cell % joint.m());
    }
    return out;
}

JointTable read_joint_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open joint table '" + path + "'");
    struct Entry {
        std::size_t x, y;
        double p;
    };
    std::vector<Entry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::string a, b, c;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c))
            throw std::invalid_argument("joint csv line " + std::to_string(lineno) + ": expected x,y,probability");
        try {
            const long long xi = std::stoll(a), yi = std::stoll(b);
            const double p = std::stod(c);
            if (xi < 0 || yi < 0) throw std::invalid_argument("negative index");
            entries.push_back({static_cast<std::size_t>(xi), static_cast<std::size_t>(yi), p});
        } catch (const std::invalid_argument&) {
            if (lineno == 1 && entries.empty()) continue;  // header
            throw std::invalid_argument("joint csv line " + std::to_string(lineno) + ": malformed entry");
        }
    }
    if (entries.empty()) throw std::invalid_argument("joint csv '" + path + "' has no entries");
    std::size_t n = 0, m = 0;
    for (const auto& e : entries) {
        n = std::max(n, e.x + 1);
        m = std::max(m, e.y + 1);
    }
    std::vector<double> p(n * m, 0.0);
    double total = 0.0;
    for (const auto& e : entries) {
        if (e.p < 0.0) throw std::invalid_argument("joint csv: negative probability");
        p[e.x * m + e.y] += e.p;
        total += e.p;
    }
    // Decimal input rarely sums to exactly one; accept rounding-level error.
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("joint csv: probabilities sum to " + std::to_string(total));
    for (double& v : p) v /= total;
    double check = 0.0;
    for (double v : p) check += v;
    if (std::abs(check - 1.0) > 1e-12) throw std::invalid_argument("joint csv: cannot normalize");
    return JointTable(n, m, std::move(p));
}

}  // namespace hfmca
