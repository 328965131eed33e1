#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "longshort/core/rng.hpp"
#include "longshort/model/transformer.hpp"

namespace longshort {

enum class TaskKind { mean, length, sum };
enum class Scheme { bernoulli_half, uniform_count };
enum class ReparamKind { identity, sqrt, log, inv_sqrt };

std::string_view task_name(TaskKind task);
TaskKind parse_task(std::string_view name);
std::string_view scheme_name(Scheme scheme);
Scheme parse_scheme(std::string_view name);
std::string_view reparam_name(ReparamKind kind);
ReparamKind parse_reparam(std::string_view name);

using Bits = std::vector<std::uint8_t>;

/// mean: fraction of ones; length: number of bits; sum: number of ones.
double target(TaskKind task, const Bits& bits);

/// Output reparameterization f with a clamped inverse.
struct Reparameterization {
    ReparamKind kind = ReparamKind::identity;
    double delta = 1e-6;

    /// f(y). Throws std::domain_error outside f's domain.
    [[nodiscard]] double apply(double y) const;
    /// f^-1(z). Values outside f's range are clamped to delta first; `clamped` is set when that happens.
    [[nodiscard]] double invert(double z, bool* clamped = nullptr) const;
};

struct SyntheticSample {
    TokenSequence tokens;  ///< BOS, bits, EOS
    Bits bits;
    double target = 0.0;      ///< f(raw_target)
    double raw_target = 0.0;
    std::size_t length = 0;
};

TokenSequence to_tokens(const Bits& bits);

/// Lengths uniform on [lo, hi]. bernoulli_half fills fair i.i.d. bits; uniform_count draws
/// the number of ones uniformly from [0, l] and places them uniformly at random.
std::vector<SyntheticSample> sample_batch(TaskKind task, Scheme scheme, std::size_t lo, std::size_t hi, std::size_t batch,
                                          std::uint64_t seed, const Reparameterization& reparam = {});

/// Draws the bits of one sample of length `len` from `rng`.
Bits sample_bits(Scheme scheme, std::size_t len, Rng& rng);

/// One JSON object per line: {"bits": [...], "task": ..., "target": ..., "scheme": ...}.
void dump_jsonl(const std::filesystem::path& path, const std::vector<SyntheticSample>& samples, TaskKind task, Scheme scheme);

}  // namespace longshort
