#include "longshort/synth/tasks.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "longshort/core/rng.hpp"

namespace longshort {

std::string_view task_name(TaskKind task) {
    switch (task) {
        case TaskKind::mean: return "mean";
        case TaskKind::length: return "length";
        case TaskKind::sum: return "sum";
    }
    return "unknown";
}

TaskKind parse_task(std::string_view name) {
    for (auto t : {TaskKind::mean, TaskKind::length, TaskKind::sum})
        if (task_name(t) == name) return t;
    throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

std::string_view scheme_name(Scheme scheme) {
    return scheme == Scheme::bernoulli_half ? "bernoulli-half" : "uniform-count";
}

Scheme parse_scheme(std::string_view name) {
    for (auto s : {Scheme::bernoulli_half, Scheme::uniform_count})
        if (scheme_name(s) == name) return s;
    throw std::invalid_argument("unknown dataset scheme '" + std::string(name) + "'");
}

std::string_view reparam_name(ReparamKind kind) {
    switch (kind) {
        case ReparamKind::identity: return "identity";
        case ReparamKind::sqrt: return "sqrt";
        case ReparamKind::log: return "log";
        case ReparamKind::inv_sqrt: return "inv-sqrt";
    }
    return "unknown";
}

ReparamKind parse_reparam(std::string_view name) {
    if (name == "none") return ReparamKind::identity;
    for (auto k : {ReparamKind::identity, ReparamKind::sqrt, ReparamKind::log, ReparamKind::inv_sqrt})
        if (reparam_name(k) == name) return k;
    throw std::invalid_argument("unknown reparameterization '" + std::string(name) + "'");
}

double target(TaskKind task, const Bits& bits) {
    if (bits.empty()) throw std::invalid_argument("target: empty bit sequence");
    const double ones = std::accumulate(bits.begin(), bits.end(), 0.0);
    switch (task) {
        case TaskKind::mean: return ones / static_cast<double>(bits.size());
        case TaskKind::length: return static_cast<double>(bits.size());
        case TaskKind::sum: return ones;
    }
    throw std::invalid_argument("target: unknown task");
}

double Reparameterization::apply(double y) const {
    switch (kind) {
        case ReparamKind::identity: return y;
        case ReparamKind::sqrt:
            if (y < 0.0) throw std::domain_error("sqrt reparameterization needs y >= 0, got " + std::to_string(y));
            return std::sqrt(y);
        case ReparamKind::log:
            if (y < delta) throw std::domain_error("log reparameterization needs y >= delta, got " + std::to_string(y));
            return std::log(y);
        case ReparamKind::inv_sqrt:
            if (y < delta) throw std::domain_error("inv-sqrt reparameterization needs y >= delta, got " + std::to_string(y));
            return 1.0 / std::sqrt(y);
    }
    throw std::invalid_argument("unknown reparameterization");
}

double Reparameterization::invert(double z, bool* clamped) const {
    if (clamped) *clamped = false;
    auto clamp = [&](double lo) {
        if (z < lo) {
            if (clamped) *clamped = true;
            return delta;
        }
        return z;
    };
    switch (kind) {
        case ReparamKind::identity: return z;
        case ReparamKind::sqrt: {
            const double s = clamp(0.0);
            return s * s;
        }
        case ReparamKind::log: return std::exp(z);
        case ReparamKind::inv_sqrt: {
            const double s = clamp(delta);
            return 1.0 / (s * s);
        }
    }
    throw std::invalid_argument("unknown reparameterization");
}

TokenSequence to_tokens(const Bits& bits) {
    TokenSequence seq;
    seq.reserve(bits.size() + 2);
    seq.push_back(synth_vocab::bos);
    for (auto b : bits) seq.push_back(b ? synth_vocab::one : synth_vocab::zero);
    seq.push_back(synth_vocab::eos);
    return seq;
}

Bits sample_bits(Scheme scheme, std::size_t len, Rng& rng) {
    Bits bits(len, 0);
    if (scheme == Scheme::bernoulli_half) {
        for (auto& b : bits) b = rng.bit();
        return bits;
    }
    const auto ones = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(len)));
    std::fill_n(bits.begin(), ones, 1);
    for (std::size_t i = len; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(bits[i - 1], bits[j]);
    }
    return bits;
}

std::vector<SyntheticSample> sample_batch(TaskKind task, Scheme scheme, std::size_t lo, std::size_t hi, std::size_t batch,
                                          std::uint64_t seed, const Reparameterization& reparam) {
    if (lo < 1 || lo > hi) {
        throw std::invalid_argument("sample_batch: invalid length range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    if (batch < 1) throw std::invalid_argument("sample_batch: batch must be at least 1");
    Rng rng(seed);
    std::vector<SyntheticSample> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
        SyntheticSample s;
        s.bits = sample_bits(scheme, len, rng);
        s.tokens = to_tokens(s.bits);
        s.length = len;
        s.raw_target = target(task, s.bits);
        s.target = reparam.apply(s.raw_target);
        out.push_back(std::move(s));
    }
    return out;
}

void dump_jsonl(const std::filesystem::path& path, const std::vector<SyntheticSample>& samples, TaskKind task, Scheme scheme) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& s : samples) {
        nlohmann::ordered_json row;
        row["bits"] = s.bits;
        row["task"] = task_name(task);
        row["target"] = s.target;
        row["scheme"] = scheme_name(scheme);
        out << row.dump() << '\n';
    }
}

}  // namespace longshort
