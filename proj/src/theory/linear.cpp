#include "longshort/theory/linear.hpp"

#include <cmath>
#include <sstream>

#include "longshort/core/ops.hpp"
#include "longshort/core/rng.hpp"

namespace longshort {

namespace {

void require_task(TaskKind task) {
    if (task != TaskKind::mean && task != TaskKind::length && task != TaskKind::sum) {
        throw std::invalid_argument("unknown task");
    }
}

double task_target(TaskKind task, int ones, int len) {
    switch (task) {
        case TaskKind::mean: return static_cast<double>(ones) / len;
        case TaskKind::length: return len;
        case TaskKind::sum: return ones;
    }
    throw std::invalid_argument("unknown task");
}

// Probability that the first len-1 fair bits hold j ones and the last bit has a given value.
double split_weight(int len, int j) {
    return std::exp(std::lgamma(len) - std::lgamma(j + 1) - std::lgamma(len - j) - len * std::log(2.0));
}

// Enumeration of (length, last token, ones among the rest) with probability weights.
struct Table {
    std::vector<double> ones_frac, zeros_frac, last1, last0, target, weight;
};

Table build_table(TaskKind task, int l_train) {
    Table t;
    for (int len = 1; len <= l_train; ++len) {
        for (int last = 0; last <= 1; ++last) {
            for (int j = 0; j < len; ++j) {
                const int ones = j + last;
                t.ones_frac.push_back(static_cast<double>(ones) / len);
                t.zeros_frac.push_back(static_cast<double>(len - ones) / len);
                t.last1.push_back(last);
                t.last0.push_back(1 - last);
                t.target.push_back(task_target(task, ones, len));
                t.weight.push_back(split_weight(len, j) / l_train);
            }
        }
    }
    return t;
}

Eigen::RowVectorXd onehot_row(std::uint8_t bit) {
    Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(2);
    x(bit ? 1 : 0) = 1.0;
    return x;
}

}  // namespace

double linear_forward(const ReducedLinearParams& p, const Bits& prefix) {
    if (prefix.empty()) throw std::invalid_argument("linear_forward: empty prefix");
    double acc = 0.0;
    for (auto b : prefix) {
        if (b > 1) throw std::invalid_argument("linear_forward: prefix entries must be 0 or 1");
        acc += b ? p.kappa1 : p.kappa0;
    }
    const double q = prefix.back() ? p.q1 : p.q0;
    return q * acc / static_cast<double>(prefix.size());
}

std::string Harmonic::text() const {
    std::ostringstream out;
    out << boost::multiprecision::numerator(exact) << '/' << boost::multiprecision::denominator(exact);
    return out.str();
}

Harmonic harmonic(int n) {
    if (n < 1) throw std::invalid_argument("harmonic: n must be at least 1, got " + std::to_string(n));
    Harmonic h;
    h.exact = 0;
    for (int i = 1; i <= n; ++i) h.exact += boost::multiprecision::cpp_rational(1, i);
    h.value = h.exact.convert_to<double>();
    return h;
}

double gamma_star(TaskKind task, int l_train) {
    if (l_train < 1) throw std::invalid_argument("gamma_star: l_train must be at least 1");
    switch (task) {
        case TaskKind::length: return (l_train + 1) / 2.0;
        case TaskKind::sum: {
            using boost::multiprecision::cpp_rational;
            const cpp_rational l(l_train);
            const cpp_rational g = l * (l + 3) / (2 * (l + harmonic(l_train).exact));
            return g.convert_to<double>();
        }
        case TaskKind::mean: return 1.0;
    }
    throw std::invalid_argument("gamma_star: unknown task");
}

double gen_error(TaskKind task, int l_train, int l_test, double eps) {
    if (l_test < 1) throw std::invalid_argument("gen_error: l_test must be at least 1");
    require_task(task);
    const double lt = l_test;
    switch (task) {
        case TaskKind::length: {
            const double d = lt - gamma_star(task, l_train);
            return d * d;
        }
        case TaskKind::sum: {
            const double d = gamma_star(task, l_train) - lt;
            return (lt + 1.0) / (2.0 * lt) * d * d;
        }
        case TaskKind::mean: return (lt + 1.0) / (2.0 * lt) * eps * eps;
    }
    throw std::invalid_argument("gen_error: unknown task");
}

double expected_error(TaskKind task, const ReducedLinearParams& p, int len) {
    if (len < 1) throw std::invalid_argument("expected_error: length must be at least 1");
    double total = 0.0;
    for (int last = 0; last <= 1; ++last) {
        const double q = last ? p.q1 : p.q0;
        for (int j = 0; j < len; ++j) {
            const int ones = j + last;
            const double pred = q * (ones * p.kappa1 + (len - ones) * p.kappa0) / len;
            const double err = pred - task_target(task, ones, len);
            total += split_weight(len, j) * err * err;
        }
    }
    return total;
}

double training_objective(TaskKind task, const ReducedLinearParams& p, int l_train) {
    double total = 0.0;
    for (int len = 1; len <= l_train; ++len) total += expected_error(task, p, len);
    return total / l_train;
}

FitResult fit_linear(TaskKind task, int l_train, const FitConfig& cfg) {
    if (l_train < 1) throw std::invalid_argument("fit_linear: l_train must be at least 1");
    require_task(task);
    const Table t = build_table(task, l_train);
    const Shape shape{t.weight.size()};
    const Tensor ones_frac = Tensor::from(shape, t.ones_frac);
    const Tensor zeros_frac = Tensor::from(shape, t.zeros_frac);
    const Tensor last1 = Tensor::from(shape, t.last1);
    const Tensor last0 = Tensor::from(shape, t.last0);
    const Tensor y = Tensor::from(shape, t.target);
    const Tensor w = Tensor::from(shape, t.weight);

    std::vector<NamedParam> params;
    Tensor q1 = Tensor::parameter({1}, {1.0});
    Tensor k1 = Tensor::parameter({1}, {1.0});
    Tensor q0 = q1;
    Tensor k0 = Tensor::scalar(0.0);
    params.push_back({"q1", q1});
    params.push_back({"kappa1", k1});
    if (cfg.tying == Tying::free) {
        q0 = Tensor::parameter({1}, {1.0});
        k0 = Tensor::parameter({1}, {task == TaskKind::length ? 1.0 : 0.0});
        params.push_back({"q0", q0});
        params.push_back({"kappa0", k0});
    } else if (task == TaskKind::length) {
        k0 = k1;
    }

    auto objective = [&] {
        const Tensor inner = add(mul(k1, ones_frac), mul(k0, zeros_frac));
        const Tensor pred = add(mul(q1, mul(inner, last1)), mul(q0, mul(inner, last0)));
        const Tensor err = sub(pred, y);
        return sum(mul(w, mul(err, err)));
    };

    FitResult result;
    double previous = std::numeric_limits<double>::infinity();
    for (int step = 0; step < cfg.max_steps; ++step) {
        for (auto& p : params) p.tensor.zero_grad();
        const Tensor loss = objective();
        const double value = loss.item();
        result.loss_trace.push_back(value);
        if (!std::isfinite(value)) {
            throw FitDivergence("fit_linear diverged at step " + std::to_string(step), result.loss_trace);
        }
        if (std::abs(previous - value) < cfg.tol) break;
        previous = value;
        backward(loss);
        for (auto& p : params) p.tensor.mutable_data()[0] -= cfg.lr * p.tensor.grad()[0];
        result.steps = step + 1;
    }
    result.params = {q1.item(), q0.item(), k1.item(), k0.item()};
    return result;
}

LinearAttentionModel LinearAttentionModel::random(int dk, int dv, int d_out, double scale, std::uint64_t seed) {
    Rng rng(seed);
    auto fill = [&](Eigen::Index r, Eigen::Index c) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
        return m;
    };
    LinearAttentionModel m;
    m.wq = fill(2, dk);
    m.wk = fill(2, dk);
    m.wv = fill(2, dv);
    m.bq = fill(1, dk);
    m.bk = fill(1, dk);
    m.bv = fill(1, dv);
    m.w = fill(dv, d_out);
    return m;
}

LinearAttentionModel LinearAttentionModel::zeros(int dk, int dv, int d_out) {
    LinearAttentionModel m;
    m.wq = Eigen::MatrixXd::Zero(2, dk);
    m.wk = Eigen::MatrixXd::Zero(2, dk);
    m.wv = Eigen::MatrixXd::Zero(2, dv);
    m.bq = Eigen::RowVectorXd::Zero(dk);
    m.bk = Eigen::RowVectorXd::Zero(dk);
    m.bv = Eigen::RowVectorXd::Zero(dv);
    m.w = Eigen::MatrixXd::Zero(dv, d_out);
    return m;
}

void LinearAttentionModel::validate() const {
    const auto dk = wq.cols();
    const auto dv = wv.cols();
    if (wq.rows() != 2 || wk.rows() != 2 || wv.rows() != 2 || wk.cols() != dk || bq.size() != dk || bk.size() != dk ||
        bv.size() != dv || w.rows() != dv || w.cols() < 1) {
        throw std::invalid_argument("LinearAttentionModel: projection shapes do not conform");
    }
    for (const Eigen::MatrixXd* m : {&wq, &wk, &wv, &w})
        if (!m->allFinite()) throw std::invalid_argument("LinearAttentionModel: non-finite weights");
    if (!bq.allFinite() || !bk.allFinite() || !bv.allFinite()) throw std::invalid_argument("LinearAttentionModel: non-finite bias");
}

Eigen::RowVectorXd LinearAttentionModel::forward(const Bits& x) const {
    if (x.empty()) throw std::invalid_argument("LinearAttentionModel::forward: empty input");
    // sum_i K_i^T V_i only depends on how many of each token occur.
    Eigen::MatrixXd kv = Eigen::MatrixXd::Zero(wk.cols(), wv.cols());
    std::size_t ones = 0;
    for (auto b : x) ones += b ? 1 : 0;
    const std::size_t counts[2] = {x.size() - ones, ones};
    for (std::uint8_t tok = 0; tok <= 1; ++tok) {
        if (!counts[tok]) continue;
        const Eigen::RowVectorXd e = onehot_row(tok);
        const Eigen::RowVectorXd k = e * wk + bk;
        const Eigen::RowVectorXd v = e * wv + bv;
        kv += static_cast<double>(counts[tok]) * (k.transpose() * v);
    }
    const Eigen::RowVectorXd q = onehot_row(x.back()) * wq + bq;
    return (q * kv * w) / static_cast<double>(x.size());
}

double LinearAttentionModel::opnorm_constant() const {
    auto augment = [](const Eigen::MatrixXd& m, const Eigen::RowVectorXd& b) {
        Eigen::MatrixXd out(m.rows() + 1, m.cols());
        out << m, b;
        return out;
    };
    const Eigen::MatrixXd product = augment(wq, bq) * augment(wk, bk).transpose() * augment(wv, bv) * w;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(product);
    const double top = svd.singularValues()(0);
    return top * top;
}

ReducedLinearParams LinearAttentionModel::reduce_binary() const {
    validate();
    if (wq.cols() != 1 || wv.cols() != 1 || w.cols() != 1) {
        throw std::invalid_argument("reduce_binary: needs dk = dv = d_out = 1");
    }
    auto kappa = [&](int tok) { return (wk(tok, 0) + bk(0)) * (wv(tok, 0) + bv(0)) * w(0, 0); };
    return {wq(1, 0) + bq(0), wq(0, 0) + bq(0), kappa(1), kappa(0)};
}

BoundReport bound_constants(int l_train, int l_test, double c0_op) {
    if (l_train < 2) throw std::invalid_argument("bound_constants: l_train must be at least 2");
    if (l_test <= l_train) {
        throw std::invalid_argument("bound_constants: l_test " + std::to_string(l_test) + " must exceed l_train " +
                                    std::to_string(l_train));
    }
    BoundReport r;
    r.l_train = l_train;
    r.l_test = l_test;
    r.c0_op = c0_op;
    const int half_up = (l_train + 1) / 2;
    for (int l = 1; l < l_train; ++l) {
        const int extra = 2 * l < l_train ? half_up - l : l_train - l;
        const int n = (l_test - l_train) / extra;
        r.rows.push_back({l, extra, n});
        r.c1_expect += n + 2;
        r.c2_expect += static_cast<double>(n) * (n + 2);
    }
    const double count = static_cast<double>(r.rows.size());
    r.c1_expect /= count;
    r.c2_expect /= count;
    const double lt = l_test;
    const double ltr = l_train;
    const double parity = l_train % 2 == 0 ? 1.0 : -1.0;
    r.c1 = r.c2_expect + static_cast<double>((l_train - 1) / 2) / ltr;
    r.c2 = r.c1_expect;
    r.c0 = r.c2_expect * lt * lt * (c0_op * c0_op + 1.0) / (4.0 * ltr * ltr) +
           r.c1_expect * (6.0 * ltr - 3.0 - parity) / (2.0 * ltr);
    return r;
}

BoundReport bound_check(const LinearAttentionModel& model, const BoundDataSpec& data, int l_train, int l_test) {
    model.validate();
    if (data.rule == TargetRule::first_token) {
        throw std::invalid_argument("bound_check: first-token targets change under suffix truncation");
    }
    if (data.n_samples < 1) throw std::invalid_argument("bound_check: n_samples must be positive");
    const auto d_out = model.w.cols();
    Eigen::RowVectorXd constant = data.constant.size() ? data.constant : Eigen::RowVectorXd::Zero(d_out);
    if (data.rule == TargetRule::last_token && d_out != 2) {
        throw std::invalid_argument("bound_check: last-token targets need a 2-dimensional output");
    }
    if (data.rule == TargetRule::constant && constant.size() != d_out) {
        throw std::invalid_argument("bound_check: constant target size must match the output size");
    }
    auto target_of = [&](const Bits& x) -> Eigen::RowVectorXd {
        return data.rule == TargetRule::constant ? constant : onehot_row(x.back());
    };

    BoundReport r = bound_constants(l_train, l_test, model.opnorm_constant());
    Rng rng(data.seed);
    const int half = l_train / 2;
    const int max_extra = std::min(half, l_train - half - 1);
    const double n = data.n_samples;
    for (int s = 0; s < data.n_samples; ++s) {
        const Bits long_x = sample_bits(Scheme::bernoulli_half, static_cast<std::size_t>(l_test), rng);
        r.measured += (model.forward(long_x) - target_of(long_x)).squaredNorm() / n;

        const auto len = static_cast<std::size_t>(rng.uniform_int(1, l_train));
        const Bits x = sample_bits(Scheme::bernoulli_half, len, rng);
        r.train_loss += (model.forward(x) - target_of(x)).squaredNorm() / n;

        if (max_extra >= 1) {
            // One aligned pair of suffix lengths (l1, l2) with l1 - l2 = l_extra, both in [half, l_train].
            const auto extra = static_cast<int>(rng.uniform_int(1, max_extra));
            const auto l1 = static_cast<int>(rng.uniform_int(half + extra + 1, l_train));
            const Bits full = sample_bits(Scheme::bernoulli_half, static_cast<std::size_t>(l_train), rng);
            const Bits s1(full.end() - l1, full.end());
            const Bits s2(full.end() - (l1 - extra), full.end());
            r.misalign += (model.forward(s1) - model.forward(s2)).squaredNorm() / n;
        }
    }
    r.bound = r.c1 * r.misalign + r.c2 * r.train_loss + r.c0;
    return r;
}

}  // namespace longshort
