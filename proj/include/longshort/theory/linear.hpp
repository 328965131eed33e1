#pragma once

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "longshort/synth/tasks.hpp"

namespace longshort {

/// Reduced form of single-layer normalized linear attention on binary tokens.
struct ReducedLinearParams {
    double q1 = 0.0;      ///< query value when the last token is 1
    double q0 = 0.0;      ///< query value when the last token is 0
    double kappa1 = 0.0;  ///< key-value product of token 1
    double kappa0 = 0.0;  ///< key-value product of token 0

    [[nodiscard]] double gamma() const { return q1 * kappa1; }
};

/// (1/k) * sum_i Q_k * kappa(x_i) over a prefix of length k.
double linear_forward(const ReducedLinearParams& p, const Bits& prefix);

struct Harmonic {
    boost::multiprecision::cpp_rational exact;
    double value = 0.0;
    [[nodiscard]] std::string text() const;  ///< "num/den"
};

Harmonic harmonic(int n);

/// Optimal Gamma: length (l+1)/2, sum l(l+3)/(2(l+H_l)), mean 1.
double gamma_star(TaskKind task, int l_train);

/// Closed-form generalization error at l_test. `eps` is the mean task's deviation of Gamma from 1.
double gen_error(TaskKind task, int l_train, int l_test, double eps = 0.0);

/// Exact expected squared error at length `len` over fair i.i.d. bits (binomial enumeration).
double expected_error(TaskKind task, const ReducedLinearParams& p, int len);

/// Training objective: mean of expected_error over lengths 1..l_train.
double training_objective(TaskKind task, const ReducedLinearParams& p, int l_train);

enum class Tying {
    condition_set,  ///< constraints of the optimality proof (length: q1=q0, k1=k0; sum/mean: q1=q0, k0=0)
    free,           ///< all four parameters independent
};

struct FitConfig {
    double lr = 1e-2;
    int max_steps = 20000;
    double tol = 1e-12;  ///< stop when the loss changes by less than this
    Tying tying = Tying::condition_set;
};

struct FitResult {
    ReducedLinearParams params;
    std::vector<double> loss_trace;
    int steps = 0;
    [[nodiscard]] double final_loss() const { return loss_trace.back(); }
};

class FitDivergence : public std::runtime_error {
public:
    FitDivergence(const std::string& what, std::vector<double> trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}
    [[nodiscard]] const std::vector<double>& trace() const { return trace_; }

private:
    std::vector<double> trace_;
};

/// Full-batch gradient descent on training_objective.
FitResult fit_linear(TaskKind task, int l_train, const FitConfig& cfg = {});

/// Full-matrix normalized causal linear attention over one-hot binary tokens:
/// g(x[:k]) = (1/k) * sum_i Q_k K_i^T V_i W with Q = xW_Q + b_Q etc.
struct LinearAttentionModel {
    Eigen::MatrixXd wq, wk, wv;  ///< 2 x dk, 2 x dk, 2 x dv
    Eigen::RowVectorXd bq, bk, bv;
    Eigen::MatrixXd w;  ///< dv x d_out

    static LinearAttentionModel random(int dk, int dv, int d_out, double scale, std::uint64_t seed);
    static LinearAttentionModel zeros(int dk, int dv, int d_out);

    void validate() const;
    [[nodiscard]] Eigen::RowVectorXd forward(const Bits& x) const;
    /// ||W_Q W_K^T W_V W||_2^2 with biases folded in as a constant input feature.
    [[nodiscard]] double opnorm_constant() const;
    /// Reduced parameters when dk = dv = d_out = 1.
    [[nodiscard]] ReducedLinearParams reduce_binary() const;
};

struct BoundRow {
    int l = 0;
    int l_extra = 0;
    int n_l = 0;
};

struct BoundReport {
    int l_train = 0;
    int l_test = 0;
    std::vector<BoundRow> rows;
    double c1_expect = 0.0;  ///< E_l[N_l + 2]
    double c2_expect = 0.0;  ///< E_l[N_l (N_l + 2)]
    double c1 = 0.0;         ///< misalignment coefficient
    double c2 = 0.0;         ///< training-loss coefficient
    double c0 = 0.0;         ///< additive constant
    double c0_op = 0.0;      ///< operator-norm constant
    double misalign = 0.0;
    double train_loss = 0.0;
    double bound = 0.0;
    double measured = 0.0;
};

/// l ranges over [1, l_train - 1] uniformly; l = l_train has l_extra = 0 and is excluded.
BoundReport bound_constants(int l_train, int l_test, double c0_op = 0.0);

enum class TargetRule { constant, last_token, first_token };

struct BoundDataSpec {
    TargetRule rule = TargetRule::constant;
    Eigen::RowVectorXd constant;  ///< target for TargetRule::constant; zeros when empty
    int n_samples = 2000;
    std::uint64_t seed = 0;
};

/// Monte Carlo estimates of the L2 generalization error at l_test, the training loss and the
/// L2 misalignment, plugged into the bound. Targets must be invariant to suffix truncation.
BoundReport bound_check(const LinearAttentionModel& model, const BoundDataSpec& data, int l_train, int l_test);

}  // namespace longshort
