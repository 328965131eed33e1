#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "longshort/model/transformer.hpp"

namespace longshort {

/// Per-row divergence between two next-token distributions.
///   sce:        -(<q, log p> + <p, log q>)
///   l2:         ||p - q||^2
///   appendix_e: -<q, log p> - <p, log p>, an asymmetric compatibility variant
enum class Divergence { sce, l2, appendix_e };

std::string_view divergence_name(Divergence d);
Divergence parse_divergence(std::string_view name);

/// Throws unless the row is finite and exp-sums to 1 within 1e-9.
void validate_log_row(std::span<const double> log_row);

double sce(std::span<const double> log_p, std::span<const double> log_q);
double l2_divergence(std::span<const double> log_p, std::span<const double> log_q);
double appendix_e_divergence(std::span<const double> log_p, std::span<const double> log_q);
double divergence(Divergence d, std::span<const double> log_p, std::span<const double> log_q);
double entropy(std::span<const double> log_p);

/// Mean divergence over matching rows of two [n, V] log-probability tensors; differentiable.
Tensor divergence_rows(Divergence d, const Tensor& log_p, const Tensor& log_q);

/// Which seq1 positions take part in the alignment term.
enum class ContextFloor {
    half,  ///< context lengths of both branches at least floor(l_train/2)
    none,  ///< every overlapping position (ablation)
};

/// Index bookkeeping for one sequence of length l_train + l_extra read as two windows:
/// seq1 = [0, l_train) and seq2 = [l_extra, l_train + l_extra).
struct OverlapPlan {
    std::size_t l_train = 0;
    std::size_t l_extra = 0;
    std::size_t full_length = 0;
    std::size_t seq1_begin = 0;  ///< aligned seq1 positions are [seq1_begin, l_train)
    std::size_t seq2_begin = 0;  ///< aligned seq2 positions are [seq2_begin, l_train - l_extra)

    [[nodiscard]] std::size_t pair_count() const { return l_train - seq1_begin; }
    /// (seq1 index, seq2 index) for every aligned pair.
    [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> pairs() const;
    /// Context lengths (l1, l2) seen by each branch for every aligned pair.
    [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> context_lengths() const;
};

/// Pairs seq1 positions floor(l_train/2)+l_extra .. l_train-1 with seq2 positions floor(l_train/2) .. l_train-l_extra-1.
OverlapPlan overlap_plan(std::size_t l_train, std::size_t l_extra, ContextFloor floor = ContextFloor::half);

struct MisalignConfig {
    std::size_t l_train = 128;
    std::size_t extra_lo = 1;
    std::size_t extra_hi = 0;  ///< 0 means floor(l_train/2)
    Divergence variant = Divergence::sce;
    std::size_t n_samples = 1024;
    double alpha = 0.0;
    ContextFloor floor = ContextFloor::half;

    void validate() const;
    [[nodiscard]] std::size_t resolved_hi() const { return extra_hi ? extra_hi : l_train / 2; }
    /// Largest l_extra in range that still yields an aligned pair.
    [[nodiscard]] std::size_t effective_hi() const;
};

struct CombinedLoss {
    Tensor total;
    Tensor ce;
    Tensor misalign;
};

/// Two forward passes over the overlapping windows of each full sequence (length l_train + l_extra).
/// ce = mean of the two windows' next-token losses; misalign = mean divergence over aligned pairs.
CombinedLoss combined_loss(const TransformerModel& model, const std::vector<TokenSequence>& full_seqs, double alpha,
                           const OverlapPlan& plan, Divergence variant = Divergence::sce);

struct MisalignReport {
    Divergence variant = Divergence::sce;
    std::size_t l_train = 0;
    std::size_t n_samples = 0;
    double estimate = 0.0;
    double std_error = 0.0;
    std::uint64_t seed = 0;

    [[nodiscard]] std::string to_json() const;
};

/// Monte Carlo estimate over draws of (window, l_extra). Each window must hold at least
/// l_train + effective_hi tokens; only its first l_train + l_extra tokens are used.
MisalignReport misalign_estimate(const TransformerModel& model, const std::vector<TokenSequence>& windows,
                                 const MisalignConfig& cfg, std::uint64_t seed);

/// Exact mean over every window and every l_extra in range.
double misalign_exact(const TransformerModel& model, const std::vector<TokenSequence>& windows, const MisalignConfig& cfg);

}  // namespace longshort
