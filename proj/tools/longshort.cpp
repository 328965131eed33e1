// Command-line entry point. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "longshort/core/rng.hpp"
#include "longshort/lm/experiment.hpp"
#include "longshort/theory/linear.hpp"

namespace fs = std::filesystem;
using namespace longshort;
using nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Every config key names a flag of the same subcommand (underscores read as dashes).
// Values from the file only fill flags that were not given on the command line.
void apply_config(CLI::App& cmd, const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    ordered_json doc;
    try {
        doc = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("config " + path + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw UsageError("config " + path + " must hold a JSON object");
    for (const auto& [key, value] : doc.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        CLI::Option* opt = cmd.get_option_no_throw(flag);
        if (opt == nullptr || flag == "--config" || flag == "--help") {
            throw UsageError("unknown config key '" + key + "' for command '" + cmd.get_name() + "'");
        }
        if (opt->count() > 0) continue;
        std::vector<std::string> parts;
        const auto text = [](const ordered_json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
        if (value.is_array()) {
            for (const auto& v : value) parts.push_back(text(v));
        } else {
            parts.push_back(text(value));
        }
        for (const auto& p : parts) opt->add_result(p);
        opt->run_callback();
    }
}

fs::path resolve_out(const std::string& flag) {
    const char* env = std::getenv("LONGSHORT_OUT");
    fs::path out = env && *env ? fs::path(env) : fs::path(flag);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw std::runtime_error("cannot create output directory " + out.string());
    return fs::absolute(out);
}

void require_file(const std::string& what, const std::string& path) {
    if (path.empty()) throw UsageError("--" + what + " is required");
    if (!fs::is_regular_file(path)) throw std::runtime_error(what + " not found: " + path);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::vector<std::string> kTasks{"mean", "length", "sum"};
const std::vector<std::string> kPes{"nope", "learnable", "alibi", "rope"};
const std::vector<std::string> kReparams{"none", "identity", "sqrt", "log", "inv-sqrt"};
const std::vector<std::string> kSchemes{"bernoulli-half", "uniform-count"};
const std::vector<std::string> kVariants{"sce", "l2", "appendix-e"};
const std::vector<std::string> kFloors{"half", "none"};

struct Common {
    std::string config;
    std::string out = "out";
    std::uint64_t seed = 0;
};

void add_common(CLI::App& cmd, Common& c, bool with_seed = true) {
    cmd.add_option("--config", c.config, "JSON file of flag values; command-line flags take precedence");
    cmd.add_option("--out", c.out, "output directory (LONGSHORT_OUT overrides)")->capture_default_str();
    if (with_seed) cmd.add_option("--seed", c.seed, "root seed")->capture_default_str();
}

struct ModelFlags {
    std::size_t d_model = 32;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::string pe = "nope";

    void add(CLI::App& cmd) {
        cmd.add_option("--d-model", d_model, "model width")->check(CLI::PositiveNumber)->capture_default_str();
        cmd.add_option("--layers", layers, "transformer blocks")->check(CLI::PositiveNumber)->capture_default_str();
        cmd.add_option("--heads", heads, "attention heads")->check(CLI::PositiveNumber)->capture_default_str();
        cmd.add_option("--pe", pe, "positional encoding")->check(CLI::IsMember(kPes))->capture_default_str();
    }
    [[nodiscard]] ModelConfig config(PeKind kind, HeadKind head, std::size_t vocab) const {
        ModelConfig m;
        m.d_model = d_model;
        m.n_layers = layers;
        m.n_heads = heads;
        m.pe.kind = kind;
        if (kind == PeKind::alibi) m.pe.slopes = PositionalEncoding::alibi_slopes(heads);
        m.head = head;
        m.vocab_size = vocab;
        return m;
    }
};

struct OptimFlags {
    std::size_t steps = 0;
    std::size_t batch = 0;
    double lr = 0.0;

    void add(CLI::App& cmd) {
        cmd.add_option("--steps", steps, "optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
        cmd.add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber)->capture_default_str();
        cmd.add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    }
};

struct MisalignFlags {
    std::string variant = "sce";
    std::size_t extra_lo = 1;
    std::size_t extra_hi = 0;
    std::string floor = "half";

    void add(CLI::App& cmd) {
        cmd.add_option("--variant", variant, "divergence")->check(CLI::IsMember(kVariants))->capture_default_str();
        cmd.add_option("--extra-lo", extra_lo, "smallest l_extra")->check(CLI::PositiveNumber)->capture_default_str();
        cmd.add_option("--extra-hi", extra_hi, "largest l_extra (0: l_train/2)")->capture_default_str();
        cmd.add_option("--floor", floor, "context floor for aligned positions")->check(CLI::IsMember(kFloors))->capture_default_str();
    }
    [[nodiscard]] MisalignConfig config(std::size_t l_train, std::size_t samples) const {
        MisalignConfig m;
        m.l_train = l_train;
        m.extra_lo = extra_lo;
        m.extra_hi = extra_hi;
        m.variant = parse_divergence(variant);
        m.floor = floor == "half" ? ContextFloor::half : ContextFloor::none;
        m.n_samples = samples;
        try {
            m.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return m;
    }
};

// ---- theory -------------------------------------------------------------

struct TheoryGamma {
    Common common;
    std::string task;
    int l_train = 10;
    bool fitted = false;
};

int run_theory_gamma(const TheoryGamma& a) {
    const TaskKind task = parse_task(a.task);
    std::cout << g6(gamma_star(task, a.l_train)) << '\n';
    if (a.fitted) std::cout << g6(fit_linear(task, a.l_train).params.gamma()) << '\n';
    return 0;
}

struct TheoryCurve {
    Common common;
    std::string task;
    int l_train = 10;
    int l_test_min = 1;
    int l_test_max = 50;
};

int run_theory_curve(const TheoryCurve& a) {
    if (a.l_test_min > a.l_test_max) throw UsageError("--l-test-min exceeds --l-test-max");
    const fs::path out = resolve_out(a.common.out);
    const TaskKind task = parse_task(a.task);
    const FitResult fit = fit_linear(task, a.l_train);
    const double gamma = fit.params.gamma();
    std::ostringstream csv;
    csv << "task,l_train,l_test,gamma_star,gamma_fitted,gen_error_closed,gen_error_measured\n";
    for (int lt = a.l_test_min; lt <= a.l_test_max; ++lt) {
        // For the mean task the closed form is evaluated at the achieved deviation from the optimum.
        const double closed = gen_error(task, a.l_train, lt, task == TaskKind::mean ? gamma - 1.0 : 0.0);
        csv << task_name(task) << ',' << a.l_train << ',' << lt << ',' << g17(gamma_star(task, a.l_train)) << ',' << g17(gamma)
            << ',' << g17(closed) << ',' << g17(expected_error(task, fit.params, lt)) << '\n';
    }
    const fs::path path = out / ("theory_" + std::string(task_name(task)) + ".csv");
    write_text(path, csv.str());
    std::cout << path.string() << '\n';
    return 0;
}

struct TheoryBound {
    Common common;
    int l_train = 10;
    int l_test = 50;
    int samples = 2000;
    int dk = 2;
    int dv = 2;
    double scale = 0.5;
    std::string rule = "constant";
};

int run_theory_bound(const TheoryBound& a) {
    if (a.l_test <= a.l_train) throw UsageError("--l-test must exceed --l-train");
    const fs::path out = resolve_out(a.common.out);
    const int d_out = a.rule == "last-token" ? 2 : 1;
    const auto model = LinearAttentionModel::random(a.dk, a.dv, d_out, a.scale, derive_seed(a.common.seed, "bound-model"));
    BoundDataSpec data;
    data.rule = a.rule == "last-token" ? TargetRule::last_token : TargetRule::constant;
    data.n_samples = a.samples;
    data.seed = derive_seed(a.common.seed, "bound-data");
    const BoundReport r = bound_check(model, data, a.l_train, a.l_test);
    ordered_json j{{"l_train", r.l_train}, {"l_test", r.l_test},   {"c1_expect", r.c1_expect}, {"c2_expect", r.c2_expect},
                   {"c1", r.c1},           {"c2", r.c2},           {"c0", r.c0},               {"c0_op", r.c0_op},
                   {"misalign", r.misalign}, {"train_loss", r.train_loss}, {"bound", r.bound}, {"measured", r.measured},
                   {"holds", r.measured <= r.bound}};
    j["rows"] = ordered_json::array();
    for (const auto& row : r.rows) j["rows"].push_back({{"l", row.l}, {"l_extra", row.l_extra}, {"n_l", row.n_l}});
    const fs::path path = out / "bound.json";
    write_text(path, j.dump(2) + "\n");
    std::cout << "measured " << g6(r.measured) << " <= bound " << g6(r.bound) << (r.measured <= r.bound ? "" : "  VIOLATED") << '\n';
    return 0;
}

// ---- synthetic ------------------------------------------------------------

struct SynthArgs {
    Common common;
    ModelFlags model;
    OptimFlags optim{5000, 128, 1e-3};
    std::string task;
    std::string reparam = "none";
    std::string scheme = "bernoulli-half";
    std::size_t l_train = 10;
    std::size_t l_test = 50;
    std::size_t samples_per_length = 512;
};

int run_synth(const SynthArgs& a) {
    if (a.task.empty()) throw UsageError("--task is required");
    if (a.l_test < 1) throw UsageError("--l-test must be positive");
    const fs::path out = resolve_out(a.common.out);
    TrainConfig cfg;
    cfg.task = parse_task(a.task);
    cfg.scheme = parse_scheme(a.scheme);
    cfg.reparam = parse_reparam(a.reparam);
    cfg.model = a.model.config(parse_pe(a.model.pe), HeadKind::scalar, synth_vocab::size);
    cfg.steps = a.optim.steps;
    cfg.batch = a.optim.batch;
    cfg.lr = a.optim.lr;
    cfg.l_train = a.l_train;
    cfg.seed = a.common.seed;
    cfg.checkpoint = out / "model.ckpt";
    const auto result = train_synthetic(cfg);
    result.report.write_csv(out / "train.csv");
    std::vector<std::size_t> lengths(a.l_test);
    for (std::size_t i = 0; i < a.l_test; ++i) lengths[i] = i + 1;
    auto curve = eval_length_curve(result.model, cfg.task, Reparameterization{cfg.reparam}, lengths, a.samples_per_length,
                                   cfg.scheme, derive_seed(a.common.seed, "eval"));
    curve.write_csv(out / "curve.csv");
    std::cerr << "trained " << cfg.steps << " steps in " << g6(result.report.wall_seconds) << " s; final loss "
              << g6(result.report.rows.back().total) << '\n';
    std::cout << (out / "curve.csv").string() << '\n';
    return 0;
}

// ---- language model ------------------------------------------------------

struct LmArgs {
    Common common;
    ModelFlags model{64, 2, 2, "rope"};
    OptimFlags optim{2000, 32, 3e-4};
    MisalignFlags misalign;
    std::string corpus;
    double split = 0.9;
    double alpha = 0.0;
    std::size_t l_train = 128;
    std::vector<std::size_t> eval_lengths;
    std::size_t ppl_windows = 64;
};

int run_lm(const LmArgs& a) {
    require_file("corpus", a.corpus);
    const auto mcfg = a.misalign.config(a.l_train, 1);
    const fs::path out = resolve_out(a.common.out);
    const Corpus corpus = ingest_corpus(a.corpus, a.split);
    TrainConfig cfg;
    cfg.model = a.model.config(parse_pe(a.model.pe), HeadKind::lm, byte_vocab::size);
    cfg.steps = a.optim.steps;
    cfg.batch = a.optim.batch;
    cfg.lr = a.optim.lr;
    cfg.alpha = a.alpha;
    cfg.l_train = a.l_train;
    cfg.seed = a.common.seed;
    cfg.misalign = mcfg;
    cfg.checkpoint = out / "model.ckpt";
    const auto result = train_lm(cfg, corpus.train());
    result.report.write_csv(out / "train.csv");
    ordered_json eval = ordered_json::object();
    const std::uint64_t eval_seed = derive_seed(a.common.seed, "ppl");
    eval[std::to_string(a.l_train)] = eval_ppl_at_length(result.model, corpus.validation(), a.l_train, a.ppl_windows, eval_seed);
    for (std::size_t l : a.eval_lengths) {
        eval[std::to_string(l)] = eval_ppl_at_length(result.model, corpus.validation(), l, a.ppl_windows, eval_seed);
    }
    write_text(out / "lm_eval.json", ordered_json{{"logppl_by_length", eval}}.dump(2) + "\n");
    std::cerr << "trained " << cfg.steps << " steps in " << g6(result.report.wall_seconds) << " s\n";
    std::cout << (out / "train.csv").string() << '\n';
    return 0;
}

struct MetricArgs {
    Common common;
    MisalignFlags misalign;
    std::string checkpoint;
    std::string corpus;
    double split = 0.9;
    std::size_t l_train = 128;
    std::size_t samples = 1024;
};

int run_metric(const MetricArgs& a) {
    require_file("checkpoint", a.checkpoint);
    require_file("corpus", a.corpus);
    const auto mcfg = a.misalign.config(a.l_train, a.samples);
    const fs::path out = resolve_out(a.common.out);
    const TransformerModel model = TransformerModel::load(a.checkpoint);
    const Corpus corpus = ingest_corpus(a.corpus, a.split);
    const auto valid = corpus.validation();
    const std::size_t need = a.l_train + mcfg.effective_hi();
    if (valid.size() < need) throw std::runtime_error("validation split of " + a.corpus + " is shorter than " + std::to_string(need) + " tokens");
    Rng rng(derive_seed(a.common.seed, "misalign-windows"));
    std::vector<TokenSequence> windows;
    for (std::size_t i = 0; i < a.samples; ++i) {
        const auto s = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(valid.size() - need)));
        windows.emplace_back(valid.begin() + static_cast<std::ptrdiff_t>(s), valid.begin() + static_cast<std::ptrdiff_t>(s + need));
    }
    auto report = misalign_estimate(model, windows, mcfg, derive_seed(a.common.seed, "misalign"));
    report.seed = a.common.seed;
    const std::string json = report.to_json();
    write_text(out / "metric.json", json + "\n");
    std::cout << json << '\n';
    return 0;
}

struct GridArgs {
    Common common;
    ModelFlags model{64, 2, 2, "rope"};
    OptimFlags optim{2000, 32, 3e-4};
    std::string corpus;
    double split = 0.9;
    std::vector<std::string> pes{"nope", "rope"};
    std::vector<double> alphas{0.0, 0.1};
    std::size_t l_train = 128;
    std::vector<std::size_t> eval_lengths{512};
    std::size_t ppl_windows = 64;
    std::size_t misalign_samples = 1024;
};

std::string alpha_label(double a) {
    std::ostringstream s;
    s << a;
    return s.str();
}

int run_grid_cmd(const GridArgs& a) {
    require_file("corpus", a.corpus);
    for (const auto& pe : a.pes)
        if (std::find(kPes.begin(), kPes.end(), pe) == kPes.end()) throw UsageError("unknown positional encoding '" + pe + "'");
    for (double al : a.alphas)
        if (!(al >= 0.0)) throw UsageError("alphas must be non-negative");
    std::vector<VariantSpec> variants;
    for (const auto& pe : a.pes) {
        for (double al : a.alphas) {
            // Variants sharing a PE share their initialization.
            variants.push_back({pe + "-a" + alpha_label(al), parse_pe(pe), al, a.l_train, derive_seed(a.common.seed, "variant:" + pe)});
        }
    }
    try {
        validate_variants(variants);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const fs::path out = resolve_out(a.common.out);
    const Corpus corpus = ingest_corpus(a.corpus, a.split);
    GridConfig cfg;
    cfg.base.model = a.model.config(PeKind::nope, HeadKind::lm, byte_vocab::size);
    cfg.base.steps = a.optim.steps;
    cfg.base.batch = a.optim.batch;
    cfg.base.lr = a.optim.lr;
    cfg.eval_lengths = a.eval_lengths;
    cfg.ppl_windows = a.ppl_windows;
    cfg.misalign_samples = a.misalign_samples;
    cfg.eval_seed = derive_seed(a.common.seed, "eval");
    cfg.out_dir = out / "variants";
    const auto report = run_grid(variants, corpus, cfg);
    report.write_csv(out / "grid.csv");
    write_text(out / "grid.json", report.to_json() + "\n");
    const auto show = [](const std::optional<double>& r) { return r ? g6(*r) : std::string("undefined"); };
    std::cout << "r(misalign, long logppl) = " << show(report.r_misalign) << '\n'
              << "r(train loss, long logppl) = " << show(report.r_train) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Length generalization experiments: linear-attention theory, synthetic tasks, misalignment-regularized LMs"};
    app.require_subcommand(1);

    auto* theory = app.add_subcommand("theory", "closed forms and fits for the linear-attention model");
    theory->require_subcommand(1);

    TheoryGamma gamma;
    auto* gamma_cmd = theory->add_subcommand("gamma", "print the optimal Gamma for a task");
    add_common(*gamma_cmd, gamma.common, false);
    gamma_cmd->add_option("--task", gamma.task, "mean, length or sum")->check(CLI::IsMember(kTasks));
    gamma_cmd->add_option("--l-train", gamma.l_train, "training length")->check(CLI::PositiveNumber)->capture_default_str();
    gamma_cmd->add_flag("--fitted", gamma.fitted, "also fit the reduced model and print its Gamma");

    TheoryCurve curve;
    auto* curve_cmd = theory->add_subcommand("curve", "write closed-form and measured error curves");
    add_common(*curve_cmd, curve.common, false);
    curve_cmd->add_option("--task", curve.task, "mean, length or sum")->check(CLI::IsMember(kTasks));
    curve_cmd->add_option("--l-train", curve.l_train, "training length")->check(CLI::PositiveNumber)->capture_default_str();
    curve_cmd->add_option("--l-test-min", curve.l_test_min, "first test length")->check(CLI::PositiveNumber)->capture_default_str();
    curve_cmd->add_option("--l-test-max", curve.l_test_max, "last test length")->check(CLI::PositiveNumber)->capture_default_str();

    TheoryBound bound;
    auto* bound_cmd = theory->add_subcommand("bound", "check the misalignment generalization bound on a random linear model");
    add_common(*bound_cmd, bound.common);
    bound_cmd->add_option("--l-train", bound.l_train, "training length")->check(CLI::Range(2, 4096))->capture_default_str();
    bound_cmd->add_option("--l-test", bound.l_test, "test length")->check(CLI::PositiveNumber)->capture_default_str();
    bound_cmd->add_option("--samples", bound.samples, "Monte Carlo samples")->check(CLI::PositiveNumber)->capture_default_str();
    bound_cmd->add_option("--dk", bound.dk, "query/key width")->check(CLI::PositiveNumber)->capture_default_str();
    bound_cmd->add_option("--dv", bound.dv, "value width")->check(CLI::PositiveNumber)->capture_default_str();
    bound_cmd->add_option("--scale", bound.scale, "weight scale")->check(CLI::PositiveNumber)->capture_default_str();
    bound_cmd->add_option("--rule", bound.rule, "target rule")->check(CLI::IsMember({"constant", "last-token"}))->capture_default_str();

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "train a transformer on a synthetic task and sweep test lengths");
    add_common(*synth_cmd, synth.common);
    synth.model.add(*synth_cmd);
    synth.optim.add(*synth_cmd);
    synth_cmd->add_option("--task", synth.task, "mean, length or sum")->check(CLI::IsMember(kTasks));
    synth_cmd->add_option("--reparam", synth.reparam, "output reparameterization")->check(CLI::IsMember(kReparams))->capture_default_str();
    synth_cmd->add_option("--scheme", synth.scheme, "bit sampling scheme")->check(CLI::IsMember(kSchemes))->capture_default_str();
    synth_cmd->add_option("--l-train", synth.l_train, "largest training length")->check(CLI::PositiveNumber)->capture_default_str();
    synth_cmd->add_option("--l-test", synth.l_test, "largest test length")->check(CLI::PositiveNumber)->capture_default_str();
    synth_cmd->add_option("--samples-per-length", synth.samples_per_length, "test samples per length")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    LmArgs lm;
    auto* lm_cmd = app.add_subcommand("lm", "train a byte-level LM with the misalignment-regularized loss");
    add_common(*lm_cmd, lm.common);
    lm.model.add(*lm_cmd);
    lm.optim.add(*lm_cmd);
    lm.misalign.add(*lm_cmd);
    lm_cmd->add_option("--corpus", lm.corpus, "text file");
    lm_cmd->add_option("--split", lm.split, "train fraction")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    lm_cmd->add_option("--alpha", lm.alpha, "misalignment weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    lm_cmd->add_option("--l-train", lm.l_train, "training window")->check(CLI::Range(2, 1 << 20))->capture_default_str();
    lm_cmd->add_option("--eval-lengths", lm.eval_lengths, "extra log-ppl lengths")->delimiter(',');
    lm_cmd->add_option("--ppl-windows", lm.ppl_windows, "windows per log-ppl estimate")->check(CLI::PositiveNumber)->capture_default_str();

    MetricArgs metric;
    auto* metric_cmd = app.add_subcommand("metric", "estimate the misalignment of a checkpoint on a corpus");
    add_common(*metric_cmd, metric.common);
    metric.misalign.add(*metric_cmd);
    metric_cmd->add_option("--checkpoint", metric.checkpoint, "model checkpoint");
    metric_cmd->add_option("--corpus", metric.corpus, "text file");
    metric_cmd->add_option("--split", metric.split, "train fraction")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    metric_cmd->add_option("--l-train", metric.l_train, "window length")->check(CLI::Range(2, 1 << 20))->capture_default_str();
    metric_cmd->add_option("--samples", metric.samples, "Monte Carlo samples")->check(CLI::PositiveNumber)->capture_default_str();

    GridArgs grid;
    auto* grid_cmd = app.add_subcommand("grid", "train a PE x alpha grid and correlate metrics with long-context log-ppl");
    add_common(*grid_cmd, grid.common);
    grid.model.add(*grid_cmd);
    grid.optim.add(*grid_cmd);
    grid_cmd->add_option("--corpus", grid.corpus, "text file");
    grid_cmd->add_option("--split", grid.split, "train fraction")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    grid_cmd->add_option("--pes", grid.pes, "positional encodings")->delimiter(',')->capture_default_str();
    grid_cmd->add_option("--alphas", grid.alphas, "misalignment weights")->delimiter(',')->capture_default_str();
    grid_cmd->add_option("--l-train", grid.l_train, "training window")->check(CLI::Range(2, 1 << 20))->capture_default_str();
    grid_cmd->add_option("--eval-lengths", grid.eval_lengths, "log-ppl lengths; the largest is the long one")
        ->delimiter(',')
        ->capture_default_str();
    grid_cmd->add_option("--ppl-windows", grid.ppl_windows, "windows per log-ppl estimate")->check(CLI::PositiveNumber)->capture_default_str();
    grid_cmd->add_option("--misalign-samples", grid.misalign_samples, "misalignment samples")->check(CLI::PositiveNumber)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return 2;
    }

    const std::map<CLI::App*, std::pair<const std::string*, std::function<int()>>> commands{
        {gamma_cmd, {&gamma.common.config, [&] {
             if (gamma.task.empty()) throw UsageError("--task is required");
             return run_theory_gamma(gamma);
         }}},
        {curve_cmd, {&curve.common.config, [&] {
             if (curve.task.empty()) throw UsageError("--task is required");
             return run_theory_curve(curve);
         }}},
        {bound_cmd, {&bound.common.config, [&] { return run_theory_bound(bound); }}},
        {synth_cmd, {&synth.common.config, [&] { return run_synth(synth); }}},
        {lm_cmd, {&lm.common.config, [&] { return run_lm(lm); }}},
        {metric_cmd, {&metric.common.config, [&] { return run_metric(metric); }}},
        {grid_cmd, {&grid.common.config, [&] { return run_grid_cmd(grid); }}},
    };
    for (const auto& [cmd, entry] : commands) {
        if (!cmd->parsed()) continue;
        try {
            apply_config(*cmd, *entry.first);
            return entry.second();
        } catch (const CLI::ParseError& e) {
            std::cerr << "usage error: " << e.what() << '\n' << cmd->help();
            return 2;
        } catch (const UsageError& e) {
            std::cerr << "usage error: " << e.what() << '\n' << cmd->help();
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 1;
        }
    }
    std::cerr << app.help();
    return 2;
}
