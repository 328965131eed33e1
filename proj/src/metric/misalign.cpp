#include "longshort/metric/misalign.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "longshort/core/ops.hpp"
#include "longshort/core/rng.hpp"

namespace longshort {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("divergence: rows differ in length");
    validate_log_row(a);
    validate_log_row(b);
}

// Next-token cross-entropy over rows 0..L-2 of each window.
Tensor window_ce(const Tensor& log_probs, const std::vector<TokenSequence>& windows) {
    const std::size_t B = windows.size();
    const std::size_t L = windows.front().size();
    const std::size_t V = log_probs.dim(1);
    const Tensor rows = reshape(slice(reshape(log_probs, {B, L, V}), 1, 0, L - 1), {B * (L - 1), V});
    std::vector<std::size_t> next;
    next.reserve(B * (L - 1));
    for (const auto& w : windows)
        for (std::size_t t = 1; t < L; ++t) next.push_back(w[t]);
    return scale(mean(pick(rows, std::move(next))), -1.0);
}

Tensor aligned_rows(const Tensor& log_probs, std::size_t B, std::size_t L, std::size_t begin, std::size_t count) {
    const std::size_t V = log_probs.dim(1);
    return reshape(slice(reshape(log_probs, {B, L, V}), 1, begin, begin + count), {B * count, V});
}

}  // namespace

std::string_view divergence_name(Divergence d) {
    switch (d) {
        case Divergence::sce: return "sce";
        case Divergence::l2: return "l2";
        case Divergence::appendix_e: return "appendix-e";
    }
    return "unknown";
}

Divergence parse_divergence(std::string_view name) {
    for (auto d : {Divergence::sce, Divergence::l2, Divergence::appendix_e})
        if (divergence_name(d) == name) return d;
    throw std::invalid_argument("unknown divergence variant '" + std::string(name) + "'");
}

void validate_log_row(std::span<const double> log_row) {
    if (log_row.empty()) throw std::invalid_argument("probability row is empty");
    double total = 0.0;
    for (double v : log_row) {
        if (!std::isfinite(v)) throw std::invalid_argument("probability row has a non-finite log entry");
        total += std::exp(v);
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("probability row is not normalized (sum " + std::to_string(total) + ")");
    }
}

double sce(std::span<const double> log_p, std::span<const double> log_q) {
    check_pair(log_p, log_q);
    double acc = 0.0;
    for (std::size_t i = 0; i < log_p.size(); ++i) acc += std::exp(log_q[i]) * log_p[i] + std::exp(log_p[i]) * log_q[i];
    return -acc;
}

double l2_divergence(std::span<const double> log_p, std::span<const double> log_q) {
    check_pair(log_p, log_q);
    double acc = 0.0;
    for (std::size_t i = 0; i < log_p.size(); ++i) {
        const double d = std::exp(log_p[i]) - std::exp(log_q[i]);
        acc += d * d;
    }
    return acc;
}

double appendix_e_divergence(std::span<const double> log_p, std::span<const double> log_q) {
    check_pair(log_p, log_q);
    double acc = 0.0;
    for (std::size_t i = 0; i < log_p.size(); ++i) acc += std::exp(log_q[i]) * log_p[i] + std::exp(log_p[i]) * log_p[i];
    return -acc;
}

double divergence(Divergence d, std::span<const double> log_p, std::span<const double> log_q) {
    switch (d) {
        case Divergence::sce: return sce(log_p, log_q);
        case Divergence::l2: return l2_divergence(log_p, log_q);
        case Divergence::appendix_e: return appendix_e_divergence(log_p, log_q);
    }
    throw std::invalid_argument("unknown divergence");
}

double entropy(std::span<const double> log_p) {
    validate_log_row(log_p);
    double acc = 0.0;
    for (double v : log_p) acc -= std::exp(v) * v;
    return acc;
}

Tensor divergence_rows(Divergence d, const Tensor& log_p, const Tensor& log_q) {
    if (log_p.shape() != log_q.shape() || log_p.rank() != 2) {
        throw ShapeError("divergence_rows: expected two equal [n,V] tensors, got " + shape_str(log_p.shape()) + " and " +
                         shape_str(log_q.shape()));
    }
    const double rows = static_cast<double>(log_p.dim(0));
    const Tensor p = exp(log_p);
    const Tensor q = exp(log_q);
    switch (d) {
        case Divergence::sce: return scale(sum(add(mul(q, log_p), mul(p, log_q))), -1.0 / rows);
        case Divergence::l2: {
            const Tensor diff = sub(p, q);
            return scale(sum(mul(diff, diff)), 1.0 / rows);
        }
        case Divergence::appendix_e: return scale(sum(add(mul(q, log_p), mul(p, log_p))), -1.0 / rows);
    }
    throw std::invalid_argument("unknown divergence");
}

std::vector<std::pair<std::size_t, std::size_t>> OverlapPlan::pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = seq1_begin; i < l_train; ++i) out.emplace_back(i, i - l_extra);
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> OverlapPlan::context_lengths() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& [i, j] : pairs()) out.emplace_back(i + 1, j + 1);
    return out;
}

OverlapPlan overlap_plan(std::size_t l_train, std::size_t l_extra, ContextFloor floor) {
    const std::size_t half = l_train / 2;
    const std::size_t max_extra = floor == ContextFloor::half ? half : (l_train ? l_train - 1 : 0);
    if (l_extra < 1 || l_extra > max_extra) {
        throw std::invalid_argument("overlap_plan: l_extra " + std::to_string(l_extra) + " outside [1, " +
                                    std::to_string(max_extra) + "] for l_train " + std::to_string(l_train));
    }
    OverlapPlan plan;
    plan.l_train = l_train;
    plan.l_extra = l_extra;
    plan.full_length = l_train + l_extra;
    plan.seq1_begin = (floor == ContextFloor::half ? half : 0) + l_extra;
    plan.seq2_begin = plan.seq1_begin - l_extra;
    return plan;
}

void MisalignConfig::validate() const {
    const std::size_t hi = resolved_hi();
    if (extra_lo < 1 || extra_lo > hi || hi + 1 > l_train) {
        throw std::invalid_argument("misalign config: need 1 <= lo <= hi <= l_train - 1, got [" + std::to_string(extra_lo) +
                                    ", " + std::to_string(hi) + "] with l_train " + std::to_string(l_train));
    }
    if (alpha < 0.0) throw std::invalid_argument("misalign config: alpha must be non-negative");
    if (n_samples < 1) throw std::invalid_argument("misalign config: n_samples must be positive");
    if (floor == ContextFloor::half && hi > l_train / 2) {
        throw std::invalid_argument("misalign config: l_extra range exceeds floor(l_train/2)");
    }
    if (extra_lo > effective_hi()) throw std::invalid_argument("misalign config: no l_extra in range yields an aligned pair");
}

std::size_t MisalignConfig::effective_hi() const {
    const std::size_t hi = resolved_hi();
    const std::size_t cap = floor == ContextFloor::half ? l_train - l_train / 2 - 1 : l_train - 1;
    return std::min(hi, cap);
}

CombinedLoss combined_loss(const TransformerModel& model, const std::vector<TokenSequence>& full_seqs, double alpha,
                           const OverlapPlan& plan, Divergence variant) {
    if (full_seqs.empty()) throw std::invalid_argument("combined_loss: empty batch");
    if (alpha < 0.0) throw std::invalid_argument("combined_loss: alpha must be non-negative");
    const std::size_t L = plan.l_train;
    std::vector<TokenSequence> seq1, seq2;
    for (const auto& s : full_seqs) {
        if (s.size() != plan.full_length) {
            throw std::invalid_argument("combined_loss: sequence length " + std::to_string(s.size()) +
                                        " does not match plan length " + std::to_string(plan.full_length));
        }
        seq1.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(L));
        seq2.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(plan.l_extra), s.end());
    }
    const Tensor lp1 = model.forward_lm_batch(seq1);
    const Tensor lp2 = model.forward_lm_batch(seq2);
    CombinedLoss out;
    out.ce = scale(add(window_ce(lp1, seq1), window_ce(lp2, seq2)), 0.5);
    const std::size_t n = plan.pair_count();
    if (n == 0) {
        out.misalign = Tensor::scalar(0.0);
        out.total = out.ce;
        return out;
    }
    const std::size_t B = full_seqs.size();
    out.misalign = divergence_rows(variant, aligned_rows(lp1, B, L, plan.seq1_begin, n),
                                   aligned_rows(lp2, B, L, plan.seq2_begin, n));
    out.total = alpha == 0.0 ? out.ce : add(out.ce, scale(out.misalign, alpha));
    return out;
}

std::string MisalignReport::to_json() const {
    nlohmann::ordered_json j;
    j["variant"] = divergence_name(variant);
    j["l_train"] = l_train;
    j["n_samples"] = n_samples;
    j["estimate"] = estimate;
    j["std_error"] = std_error;
    j["seed"] = seed;
    return j.dump(2);
}

namespace {

// Mean divergence over the aligned pairs of each window, for one l_extra.
std::vector<double> per_window_divergence(const TransformerModel& model, const std::vector<TokenSequence>& windows,
                                          const OverlapPlan& plan, Divergence variant) {
    NoGradGuard guard;
    std::vector<TokenSequence> seq1, seq2;
    for (const auto& w : windows) {
        seq1.emplace_back(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(plan.l_train));
        seq2.emplace_back(w.begin() + static_cast<std::ptrdiff_t>(plan.l_extra),
                          w.begin() + static_cast<std::ptrdiff_t>(plan.full_length));
    }
    const Tensor lp1 = model.forward_lm_batch(seq1);
    const Tensor lp2 = model.forward_lm_batch(seq2);
    const std::size_t V = lp1.dim(1);
    const std::size_t L = plan.l_train;
    std::vector<double> out;
    out.reserve(windows.size());
    const auto d1 = lp1.data();
    const auto d2 = lp2.data();
    for (std::size_t b = 0; b < windows.size(); ++b) {
        double acc = 0.0;
        for (const auto& [i, j] : plan.pairs()) {
            acc += divergence(variant, d1.subspan((b * L + i) * V, V), d2.subspan((b * L + j) * V, V));
        }
        out.push_back(acc / static_cast<double>(plan.pair_count()));
    }
    return out;
}

void check_windows(const std::vector<TokenSequence>& windows, const MisalignConfig& cfg) {
    cfg.validate();
    if (windows.empty()) throw std::invalid_argument("misalign: no windows");
    const std::size_t need = cfg.l_train + cfg.effective_hi();
    for (const auto& w : windows) {
        if (w.size() < need) {
            throw std::invalid_argument("misalign: window of length " + std::to_string(w.size()) + " is shorter than the required " +
                                        std::to_string(need) + " tokens");
        }
    }
}

}  // namespace

MisalignReport misalign_estimate(const TransformerModel& model, const std::vector<TokenSequence>& windows,
                                 const MisalignConfig& cfg, std::uint64_t seed) {
    check_windows(windows, cfg);
    const std::size_t hi = cfg.effective_hi();
    Rng rng(seed);
    // Draw everything first, then evaluate grouped by l_extra in a fixed order.
    std::map<std::size_t, std::vector<std::size_t>> by_extra;
    for (std::size_t s = 0; s < cfg.n_samples; ++s) {
        const auto w = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(windows.size() - 1)));
        const auto e = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.extra_lo), static_cast<std::int64_t>(hi)));
        by_extra[e].push_back(w);
    }
    std::vector<double> values;
    values.reserve(cfg.n_samples);
    constexpr std::size_t chunk = 32;
    for (const auto& [e, idx] : by_extra) {
        const OverlapPlan plan = overlap_plan(cfg.l_train, e, cfg.floor);
        for (std::size_t start = 0; start < idx.size(); start += chunk) {
            std::vector<TokenSequence> batch;
            for (std::size_t k = start; k < std::min(idx.size(), start + chunk); ++k) batch.push_back(windows[idx[k]]);
            const auto v = per_window_divergence(model, batch, plan, cfg.variant);
            values.insert(values.end(), v.begin(), v.end());
        }
    }
    MisalignReport r;
    r.variant = cfg.variant;
    r.l_train = cfg.l_train;
    r.n_samples = cfg.n_samples;
    r.seed = seed;
    double total = 0.0;
    for (double v : values) total += v;
    r.estimate = total / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.estimate) * (v - r.estimate);
        r.std_error = std::sqrt(ss / static_cast<double>(values.size() - 1) / static_cast<double>(values.size()));
    }
    return r;
}

double misalign_exact(const TransformerModel& model, const std::vector<TokenSequence>& windows, const MisalignConfig& cfg) {
    check_windows(windows, cfg);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t e = cfg.extra_lo; e <= cfg.effective_hi(); ++e) {
        for (double v : per_window_divergence(model, windows, overlap_plan(cfg.l_train, e, cfg.floor), cfg.variant)) {
            total += v;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace longshort
