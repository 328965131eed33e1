#include "longshort/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "longshort/core/ops.hpp"
#include "longshort/core/optim.hpp"
#include "longshort/core/rng.hpp"

namespace longshort {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

ModelConfig seeded_model(const TrainConfig& cfg, HeadKind head) {
    ModelConfig m = cfg.model;
    m.head = head;
    m.seed = derive_seed(cfg.seed, "model");
    return m;
}

void save_if_configured(const TransformerModel& model, const std::filesystem::path& path) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    model.save(path);
}

// Shared step loop: `loss_fn(step)` returns (total, ce, misalign) tensors for the current parameters.
template <typename LossFn>
TrainReport run_loop(const TrainConfig& cfg, TransformerModel& model, LossFn loss_fn) {
    const auto start = std::chrono::steady_clock::now();
    AdamState state;
    const AdamConfig adam{.lr = cfg.lr};
    TrainReport report;
    report.rows.reserve(cfg.steps);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        zero_grads(model.parameters());
        const CombinedLoss loss = loss_fn(step);
        TrainRow row{step, loss.total.item(), loss.ce.item(), loss.misalign.item()};
        if (!std::isfinite(row.total)) {
            save_if_configured(model, cfg.checkpoint);
            throw TrainingDiverged("training diverged: non-finite loss at step " + std::to_string(step) +
                                       (cfg.checkpoint.empty() ? "" : "; last good model saved to " + cfg.checkpoint.string()),
                                   step, cfg.checkpoint);
        }
        backward(loss.total);
        adam_step(model.parameters(), state, adam);
        report.rows.push_back(row);
        if (cfg.eval_every && step % cfg.eval_every == 0) save_if_configured(model, cfg.checkpoint);
    }
    save_if_configured(model, cfg.checkpoint);
    report.checkpoint = cfg.checkpoint;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace

void TrainConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("train config: steps must be at least 1");
    if (batch < 1) throw std::invalid_argument("train config: batch must be at least 1");
    if (!(alpha >= 0.0)) throw std::invalid_argument("train config: alpha must be non-negative");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
    if (l_train < 1) throw std::invalid_argument("train config: l_train must be at least 1");
    if (ce_only && alpha != 0.0) throw std::invalid_argument("train config: ce_only requires alpha = 0");
    model.validate();
}

double TrainReport::tail_mean(std::size_t n, double TrainRow::*field) const {
    if (rows.empty()) throw std::logic_error("train report has no rows");
    n = std::min(n, rows.size());
    double acc = 0.0;
    for (std::size_t i = rows.size() - n; i < rows.size(); ++i) acc += rows[i].*field;
    return acc / static_cast<double>(n);
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << "step,total,ce,misalign\n";
    for (const auto& r : rows) out << r.step << ',' << fmt(r.total) << ',' << fmt(r.ce) << ',' << fmt(r.misalign) << '\n';
}

TrainResult train_synthetic(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.model.head != HeadKind::scalar) throw std::invalid_argument("train_synthetic: model head must be scalar");
    TransformerModel model(seeded_model(cfg, HeadKind::scalar));
    const Reparameterization reparam{cfg.reparam};
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
    auto report = run_loop(cfg, model, [&](std::size_t step) {
        const auto samples = sample_batch(cfg.task, cfg.scheme, 1, cfg.l_train, cfg.batch,
                                          derive_seed(cfg.seed, "batch:" + std::to_string(step)), reparam);
        std::map<std::size_t, std::vector<std::size_t>> buckets;
        for (std::size_t i = 0; i < samples.size(); ++i) buckets[samples[i].length].push_back(i);
        Tensor sq_sum;
        for (const auto& [len, idx] : buckets) {
            std::vector<TokenSequence> seqs;
            std::vector<double> targets;
            for (std::size_t i : idx) {
                seqs.push_back(samples[i].tokens);
                targets.push_back(samples[i].target);
            }
            const Tensor diff = sub(model.forward_scalar_batch(seqs), Tensor::from({idx.size()}, std::move(targets)));
            const Tensor part = sum(mul(diff, diff));
            sq_sum = sq_sum.defined() ? add(sq_sum, part) : part;
        }
        const Tensor mse = scale(sq_sum, inv_batch);
        return CombinedLoss{mse, mse, Tensor::scalar(0.0)};
    });
    report.converged = report.tail_mean(10, &TrainRow::total) < cfg.converge_threshold;
    return {std::move(model), std::move(report)};
}

void EvalCurve::write_csv(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << "length,loss,n,clamped\n";
    for (const auto& p : points) out << p.length << ',' << fmt(p.loss) << ',' << p.n << ',' << p.clamped << '\n';
}

double EvalCurve::mean_loss(std::size_t lo, std::size_t hi) const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& p : points) {
        if (p.length < lo || p.length > hi) continue;
        acc += p.loss;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("eval curve: no lengths in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return acc / static_cast<double>(n);
}

double EvalCurve::max_loss(std::size_t lo, std::size_t hi) const {
    double best = -1.0;
    for (const auto& p : points)
        if (p.length >= lo && p.length <= hi) best = std::max(best, p.loss);
    if (best < 0.0) throw std::invalid_argument("eval curve: no lengths in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return best;
}

const EvalPoint& EvalCurve::at(std::size_t length) const {
    for (const auto& p : points)
        if (p.length == length) return p;
    throw std::out_of_range("eval curve: no point at length " + std::to_string(length));
}

EvalCurve eval_length_curve(const Predictor& predict, TaskKind task, const Reparameterization& reparam,
                            const std::vector<std::size_t>& lengths, std::size_t n_per_length, Scheme scheme,
                            std::uint64_t seed) {
    if (lengths.empty()) throw std::invalid_argument("eval_length_curve: no lengths");
    if (n_per_length < 1) throw std::invalid_argument("eval_length_curve: n_per_length must be positive");
    if (!std::is_sorted(lengths.begin(), lengths.end()) ||
        std::adjacent_find(lengths.begin(), lengths.end()) != lengths.end()) {
        throw std::invalid_argument("eval_length_curve: lengths must be strictly increasing");
    }
    EvalCurve curve;
    curve.task = task;
    constexpr std::size_t chunk = 128;
    for (std::size_t len : lengths) {
        // Raw targets only; the reparameterization is applied on the prediction side.
        const auto samples = sample_batch(task, scheme, len, len, n_per_length, derive_seed(seed, "eval:" + std::to_string(len)));
        EvalPoint point{len, 0.0, samples.size(), 0};
        for (std::size_t start = 0; start < samples.size(); start += chunk) {
            const std::size_t stop = std::min(samples.size(), start + chunk);
            std::vector<TokenSequence> seqs;
            for (std::size_t i = start; i < stop; ++i) seqs.push_back(samples[i].tokens);
            const auto preds = predict(seqs);
            if (preds.size() != seqs.size()) throw std::logic_error("predictor returned the wrong number of values");
            for (std::size_t i = start; i < stop; ++i) {
                bool clamped = false;
                const double y = reparam.invert(preds[i - start], &clamped);
                point.clamped += clamped ? 1 : 0;
                const double d = y - samples[i].raw_target;
                point.loss += d * d;
            }
        }
        point.loss /= static_cast<double>(samples.size());
        curve.points.push_back(point);
    }
    return curve;
}

EvalCurve eval_length_curve(const TransformerModel& model, TaskKind task, const Reparameterization& reparam,
                            const std::vector<std::size_t>& lengths, std::size_t n_per_length, Scheme scheme,
                            std::uint64_t seed) {
    const Predictor predict = [&model](const std::vector<TokenSequence>& seqs) {
        NoGradGuard guard;
        const Tensor out = model.forward_scalar_batch(seqs);
        return std::vector<double>(out.data().begin(), out.data().end());
    };
    return eval_length_curve(predict, task, reparam, lengths, n_per_length, scheme, seed);
}

namespace {

// Next-token loss of one window batch without the overlap machinery.
Tensor windows_ce(const TransformerModel& model, const std::vector<TokenSequence>& windows) {
    const std::size_t B = windows.size();
    const std::size_t L = windows.front().size();
    const Tensor lp = model.forward_lm_batch(windows);
    const std::size_t V = lp.dim(1);
    const Tensor rows = reshape(slice(reshape(lp, {B, L, V}), 1, 0, L - 1), {B * (L - 1), V});
    std::vector<std::size_t> next;
    for (const auto& w : windows)
        for (std::size_t t = 1; t < L; ++t) next.push_back(w[t]);
    return scale(mean(pick(rows, std::move(next))), -1.0);
}

}  // namespace

TrainResult train_lm(const TrainConfig& cfg, std::span<const std::size_t> corpus) {
    cfg.validate();
    if (cfg.model.head != HeadKind::lm) throw std::invalid_argument("train_lm: model head must be lm");
    MisalignConfig mcfg = cfg.misalign;
    mcfg.l_train = cfg.l_train;
    mcfg.alpha = cfg.alpha;
    mcfg.validate();
    const std::size_t hi = mcfg.effective_hi();
    if (corpus.size() < 10 * cfg.l_train || corpus.size() < cfg.l_train + hi) {
        throw std::invalid_argument("train_lm: corpus has " + std::to_string(corpus.size()) + " tokens, need at least " +
                                    std::to_string(std::max(10 * cfg.l_train, cfg.l_train + hi)));
    }
    for (std::size_t t : corpus)
        if (t >= cfg.model.vocab_size) throw std::invalid_argument("train_lm: corpus token outside the model vocabulary");
    TransformerModel model(seeded_model(cfg, HeadKind::lm));
    Rng rng(derive_seed(cfg.seed, "lm-windows"));
    auto report = run_loop(cfg, model, [&](std::size_t) {
        const auto e = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(mcfg.extra_lo), static_cast<std::int64_t>(hi)));
        const OverlapPlan plan = overlap_plan(cfg.l_train, e, mcfg.floor);
        const auto max_start = static_cast<std::int64_t>(corpus.size() - plan.full_length);
        std::vector<TokenSequence> batch;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto s = static_cast<std::size_t>(rng.uniform_int(0, max_start));
            batch.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(s),
                               corpus.begin() + static_cast<std::ptrdiff_t>(s + plan.full_length));
        }
        if (!cfg.ce_only) return combined_loss(model, batch, cfg.alpha, plan, mcfg.variant);
        std::vector<TokenSequence> seq1, seq2;
        for (const auto& s : batch) {
            seq1.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(cfg.l_train));
            seq2.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(e), s.end());
        }
        const Tensor ce = scale(add(windows_ce(model, seq1), windows_ce(model, seq2)), 0.5);
        return CombinedLoss{ce, ce, Tensor::scalar(0.0)};
    });
    return {std::move(model), std::move(report)};
}

double eval_ppl_at_length(const TransformerModel& model, std::span<const std::size_t> corpus, std::size_t l,
                          std::size_t n_windows, std::uint64_t seed) {
    if (l < 2) throw std::invalid_argument("eval_ppl_at_length: window length must be at least 2");
    if (n_windows < 1) throw std::invalid_argument("eval_ppl_at_length: n_windows must be positive");
    if (corpus.size() < l) {
        throw std::invalid_argument("eval_ppl_at_length: corpus has " + std::to_string(corpus.size()) +
                                    " tokens, fewer than one window of " + std::to_string(l));
    }
    NoGradGuard guard;
    Rng rng(seed);
    const auto max_start = static_cast<std::int64_t>(corpus.size() - l);
    std::vector<std::size_t> starts(n_windows);
    for (auto& s : starts) s = static_cast<std::size_t>(rng.uniform_int(0, max_start));
    const std::size_t first = (l + 1) / 2 - 1;  // row t has t+1 tokens of context
    const std::size_t per_window = l - 1 - first;
    const std::size_t chunk = std::max<std::size_t>(1, 4096 / l);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < n_windows; b0 += chunk) {
        std::vector<TokenSequence> windows;
        for (std::size_t b = b0; b < std::min(n_windows, b0 + chunk); ++b) {
            windows.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(starts[b]),
                                 corpus.begin() + static_cast<std::ptrdiff_t>(starts[b] + l));
        }
        const Tensor lp = model.forward_lm_batch(windows);
        const auto d = lp.data();
        const std::size_t V = lp.dim(1);
        for (std::size_t w = 0; w < windows.size(); ++w) {
            for (std::size_t t = first; t + 1 < l; ++t) total -= d[(w * l + t) * V + windows[w][t + 1]];
        }
    }
    return total / static_cast<double>(n_windows * per_window);
}

}  // namespace longshort
