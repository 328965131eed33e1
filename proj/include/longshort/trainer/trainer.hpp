#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "longshort/metric/misalign.hpp"
#include "longshort/synth/tasks.hpp"

namespace longshort {

struct TrainConfig {
    // Synthetic runs read task/scheme/reparam; LM runs read misalign.
    TaskKind task = TaskKind::mean;
    Scheme scheme = Scheme::bernoulli_half;
    ReparamKind reparam = ReparamKind::identity;
    ModelConfig model;
    std::size_t steps = 5000;
    std::size_t batch = 128;
    double lr = 1e-3;
    double alpha = 0.0;
    std::size_t l_train = 10;
    std::uint64_t seed = 0;
    /// Checkpoint interval in steps (0 disables periodic checkpoints).
    std::size_t eval_every = 0;
    std::filesystem::path checkpoint;
    /// Synthetic runs: a run converges when the mean of the last 10 losses is below this.
    double converge_threshold = 1e-3;
    MisalignConfig misalign;
    /// LM runs: skip the divergence term entirely (only valid with alpha = 0).
    bool ce_only = false;

    void validate() const;
};

struct TrainRow {
    std::size_t step = 0;
    double total = 0.0;
    double ce = 0.0;
    double misalign = 0.0;
};

struct TrainReport {
    std::vector<TrainRow> rows;
    double wall_seconds = 0.0;
    std::filesystem::path checkpoint;
    bool converged = false;

    [[nodiscard]] double tail_mean(std::size_t n, double TrainRow::*field) const;
    /// `step,total,ce,misalign`; values at full double precision.
    void write_csv(const std::filesystem::path& path) const;
};

/// Thrown when a step's loss is not finite. The pre-step model has been saved to `checkpoint` if one was configured.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, std::size_t step, std::filesystem::path checkpoint)
        : std::runtime_error(what), step(step), checkpoint(std::move(checkpoint)) {}
    std::size_t step;
    std::filesystem::path checkpoint;
};

struct TrainResult {
    TransformerModel model;
    TrainReport report;
};

/// Squared-error training on lengths uniform in [1, l_train]; each batch is bucketed by length.
TrainResult train_synthetic(const TrainConfig& cfg);

struct EvalPoint {
    std::size_t length = 0;
    double loss = 0.0;
    std::size_t n = 0;
    std::size_t clamped = 0;
};

struct EvalCurve {
    TaskKind task = TaskKind::mean;
    std::string model_id;
    std::vector<EvalPoint> points;

    /// `length,loss,n,clamped`
    void write_csv(const std::filesystem::path& path) const;
    /// Mean loss over points with lo <= length <= hi.
    [[nodiscard]] double mean_loss(std::size_t lo, std::size_t hi) const;
    [[nodiscard]] double max_loss(std::size_t lo, std::size_t hi) const;
    [[nodiscard]] const EvalPoint& at(std::size_t length) const;
};

/// Maps a batch of equal-length token sequences to raw (possibly reparameterized) predictions.
using Predictor = std::function<std::vector<double>(const std::vector<TokenSequence>&)>;

EvalCurve eval_length_curve(const Predictor& predict, TaskKind task, const Reparameterization& reparam,
                            const std::vector<std::size_t>& lengths, std::size_t n_per_length, Scheme scheme,
                            std::uint64_t seed);
EvalCurve eval_length_curve(const TransformerModel& model, TaskKind task, const Reparameterization& reparam,
                            const std::vector<std::size_t>& lengths, std::size_t n_per_length, Scheme scheme,
                            std::uint64_t seed);

/// Combined-loss training on random windows of `corpus`; each step draws l_extra from cfg.misalign.
TrainResult train_lm(const TrainConfig& cfg, std::span<const std::size_t> corpus);

/// Mean natural-log next-token loss over n_windows random windows of length l, counting only
/// predictions made with at least ceil(l/2) tokens of context.
double eval_ppl_at_length(const TransformerModel& model, std::span<const std::size_t> corpus, std::size_t l,
                          std::size_t n_windows, std::uint64_t seed);

}  // namespace longshort
