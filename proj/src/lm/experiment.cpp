#include "longshort/lm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"
#include "longshort/core/rng.hpp"

namespace longshort {

TokenSequence tokenize(std::string_view text) {
    TokenSequence ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(static_cast<unsigned char>(c));
    return ids;
}

std::string detokenize(const TokenSequence& ids) {
    std::string out;
    out.reserve(ids.size());
    for (std::size_t id : ids) {
        if (id > 255) throw std::invalid_argument("detokenize: id " + std::to_string(id) + " is not a byte");
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

Corpus ingest_corpus(const std::filesystem::path& path, double split_fraction) {
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw std::invalid_argument("ingest_corpus: split must lie in (0, 1)");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read corpus " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.empty()) throw std::runtime_error("corpus " + path.string() + " is empty");
    Corpus c;
    c.tokens = tokenize(bytes);
    c.split = static_cast<std::size_t>(std::floor(static_cast<double>(bytes.size()) * split_fraction));
    if (c.split == 0 || c.split == bytes.size()) throw std::runtime_error("corpus " + path.string() + " is too small to split");
    return c;
}

std::optional<double> pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("pearson: inputs differ in length");
    if (xs.size() < 3) throw std::invalid_argument("pearson: need at least 3 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void validate_variants(const std::vector<VariantSpec>& variants) {
    if (variants.size() < 3) {
        throw std::invalid_argument("grid needs at least 3 variants for a correlation, got " + std::to_string(variants.size()));
    }
    std::set<std::string> seen;
    for (const auto& v : variants) {
        if (!seen.insert(v.label).second) throw std::invalid_argument("duplicate variant label '" + v.label + "'");
    }
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

TrainConfig variant_config(const VariantSpec& spec, const GridConfig& cfg) {
    TrainConfig t = cfg.base;
    t.model.pe.kind = spec.pe;
    t.model.pe.slopes = spec.pe == PeKind::alibi ? PositionalEncoding::alibi_slopes(t.model.n_heads) : std::vector<double>{};
    t.model.head = HeadKind::lm;
    t.model.vocab_size = byte_vocab::size;
    t.alpha = spec.alpha;
    t.l_train = spec.l_train;
    t.seed = spec.seed;
    t.ce_only = false;
    if (!cfg.out_dir.empty()) t.checkpoint = cfg.out_dir / (spec.label + ".ckpt");
    return t;
}

}  // namespace

GridRow measure_variant(const TransformerModel& model, const VariantSpec& spec, const Corpus& corpus, const GridConfig& cfg) {
    if (cfg.eval_lengths.empty()) throw std::invalid_argument("grid: no eval lengths");
    const auto valid = corpus.validation();
    GridRow row{spec.label, spec.pe, spec.alpha, spec.l_train, 0.0, 0.0, 0.0, {}};
    // Evaluation streams depend only on the grid seed so every variant sees the same windows.
    row.loss_train = eval_ppl_at_length(model, valid, spec.l_train, cfg.ppl_windows, derive_seed(cfg.eval_seed, "ppl"));
    std::vector<std::size_t> lengths = cfg.eval_lengths;
    std::sort(lengths.begin(), lengths.end());
    for (std::size_t l : lengths) {
        row.logppl_by_length.emplace_back(l, eval_ppl_at_length(model, valid, l, cfg.ppl_windows, derive_seed(cfg.eval_seed, "ppl")));
    }
    row.long_logppl = row.logppl_by_length.back().second;

    MisalignConfig mcfg = cfg.base.misalign;
    mcfg.l_train = spec.l_train;
    mcfg.variant = Divergence::sce;
    mcfg.n_samples = cfg.misalign_samples;
    mcfg.validate();
    const std::size_t need = spec.l_train + mcfg.effective_hi();
    if (valid.size() < need) throw std::invalid_argument("grid: validation split shorter than " + std::to_string(need) + " tokens");
    Rng rng(derive_seed(cfg.eval_seed, "misalign-windows"));
    std::vector<TokenSequence> windows;
    for (std::size_t i = 0; i < cfg.misalign_samples; ++i) {
        const auto s = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(valid.size() - need)));
        windows.emplace_back(valid.begin() + static_cast<std::ptrdiff_t>(s), valid.begin() + static_cast<std::ptrdiff_t>(s + need));
    }
    row.misalign = misalign_estimate(model, windows, mcfg, derive_seed(cfg.eval_seed, "misalign")).estimate;
    return row;
}

CorrelationReport run_grid(const std::vector<VariantSpec>& variants, const Corpus& corpus, const GridConfig& cfg) {
    validate_variants(variants);
    for (const auto& v : variants) variant_config(v, cfg).validate();
    auto ordered = variants;
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
    CorrelationReport report;
    for (const auto& spec : ordered) {
        const TrainConfig tcfg = variant_config(spec, cfg);
        auto result = train_lm(tcfg, corpus.train());
        if (!cfg.out_dir.empty()) result.report.write_csv(cfg.out_dir / (spec.label + ".train.csv"));
        report.rows.push_back(measure_variant(result.model, spec, corpus, cfg));
    }
    std::vector<double> mis, train, longp;
    for (const auto& r : report.rows) {
        mis.push_back(r.misalign);
        train.push_back(r.loss_train);
        longp.push_back(r.long_logppl);
    }
    report.r_misalign = pearson(mis, longp);
    report.r_train = pearson(train, longp);
    return report;
}

void CorrelationReport::write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "label,pe,alpha,l_train,loss_train,misalign,long_logppl\n";
    for (const auto& r : rows) {
        out << r.label << ',' << pe_name(r.pe) << ',' << fmt(r.alpha) << ',' << r.l_train << ',' << fmt(r.loss_train) << ','
            << fmt(r.misalign) << ',' << fmt(r.long_logppl) << '\n';
    }
}

std::string CorrelationReport::to_json() const {
    nlohmann::ordered_json j;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json by_len = nlohmann::ordered_json::object();
        for (const auto& [l, v] : r.logppl_by_length) by_len[std::to_string(l)] = v;
        j["rows"].push_back({{"label", r.label},
                             {"pe", pe_name(r.pe)},
                             {"alpha", r.alpha},
                             {"l_train", r.l_train},
                             {"loss_train", r.loss_train},
                             {"misalign", r.misalign},
                             {"long_logppl", r.long_logppl},
                             {"logppl_by_length", by_len}});
    }
    j["r_misalign_long_logppl"] = optional_json(r_misalign);
    j["r_train_long_logppl"] = optional_json(r_train);
    return j.dump(2);
}

const GridRow& CorrelationReport::row(std::string_view label) const {
    for (const auto& r : rows)
        if (r.label == label) return r;
    throw std::out_of_range("no grid row labelled '" + std::string(label) + "'");
}

}  // namespace longshort
