#include "longshort/model/transformer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include "json.hpp"
#include <sstream>
#include <stdexcept>

#include "longshort/core/ops.hpp"
#include "longshort/core/rng.hpp"

namespace longshort {

namespace {

constexpr std::string_view kMagic = "LSCKPT 1";

std::string layer_prefix(std::size_t i) { return "layer" + std::to_string(i) + "."; }

// Position-major constant tables for the rotary rotation, each [B, T, dh/2].
std::pair<Tensor, Tensor> rope_tables(std::size_t batch, std::size_t len, std::size_t dh, double base) {
    const std::size_t half = dh / 2;
    std::vector<double> cos_v(batch * len * half);
    std::vector<double> sin_v(cos_v.size());
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t i = 0; i < half; ++i) {
            const double angle = static_cast<double>(t) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
            for (std::size_t b = 0; b < batch; ++b) {
                cos_v[(b * len + t) * half + i] = std::cos(angle);
                sin_v[(b * len + t) * half + i] = std::sin(angle);
            }
        }
    }
    return {Tensor::from({batch, len, half}, std::move(cos_v)), Tensor::from({batch, len, half}, std::move(sin_v))};
}

// Half-split rotation of the last dimension of x [B, T, dh].
Tensor rotate(const Tensor& x, const Tensor& cos_t, const Tensor& sin_t) {
    const std::size_t dh = x.dim(2);
    const Tensor x1 = slice(x, 2, 0, dh / 2);
    const Tensor x2 = slice(x, 2, dh / 2, dh);
    const std::vector<Tensor> parts{sub(mul(x1, cos_t), mul(x2, sin_t)), add(mul(x2, cos_t), mul(x1, sin_t))};
    return concat(parts, 2);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

Tensor norm(const Tensor& x, const Tensor& gain, const Tensor& bias) { return add_row(mul_row(layer_norm(x), gain), bias); }

}  // namespace

std::string_view pe_name(PeKind kind) {
    switch (kind) {
        case PeKind::nope: return "nope";
        case PeKind::learnable: return "learnable";
        case PeKind::alibi: return "alibi";
        case PeKind::rope: return "rope";
    }
    return "unknown";
}

PeKind parse_pe(std::string_view name) {
    for (auto kind : {PeKind::nope, PeKind::learnable, PeKind::alibi, PeKind::rope}) {
        if (pe_name(kind) == name) return kind;
    }
    throw std::invalid_argument("unknown positional encoding '" + std::string(name) + "'");
}

std::vector<double> PositionalEncoding::alibi_slopes(std::size_t n_heads) {
    std::vector<double> slopes(n_heads);
    for (std::size_t k = 0; k < n_heads; ++k) {
        slopes[k] = std::pow(2.0, -8.0 * static_cast<double>(k + 1) / static_cast<double>(n_heads));
    }
    return slopes;
}

double attention_bias(const PositionalEncoding& pe, std::size_t query_pos, std::size_t key_pos, std::size_t head) {
    if (key_pos > query_pos) {
        throw std::invalid_argument("attention_bias: key position " + std::to_string(key_pos) +
                                    " is after query position " + std::to_string(query_pos));
    }
    if (pe.kind != PeKind::alibi) return 0.0;
    if (head >= pe.slopes.size()) throw std::invalid_argument("attention_bias: no ALiBi slope for head " + std::to_string(head));
    return -pe.slopes[head] * static_cast<double>(query_pos - key_pos);
}

void ModelConfig::validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || ffn_multiplier == 0) {
        throw std::invalid_argument("model config: sizes must be positive");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                    std::to_string(n_heads));
    }
    if (head == HeadKind::scalar && vocab_size < synth_vocab::size) {
        throw std::invalid_argument("model config: scalar-head models need the 4-token synthetic vocabulary");
    }
    if (vocab_size < 2) throw std::invalid_argument("model config: vocab_size must be at least 2");
    switch (pe.kind) {
        case PeKind::learnable:
            if (pe.max_positions == 0) throw std::invalid_argument("model config: learnable PE needs max_positions > 0");
            break;
        case PeKind::alibi:
            if (pe.slopes.size() != n_heads) throw std::invalid_argument("model config: need one ALiBi slope per head");
            for (double s : pe.slopes)
                if (!(s > 0.0)) throw std::invalid_argument("model config: ALiBi slopes must be positive");
            break;
        case PeKind::rope:
            if (!(pe.rope_base > 1.0)) throw std::invalid_argument("model config: RoPE base must exceed 1");
            if ((d_model / n_heads) % 2 != 0) throw std::invalid_argument("model config: RoPE needs an even head size");
            break;
        case PeKind::nope: break;
    }
}

void TransformerModel::add_param(const std::string& name, Shape shape, double stddev, double fill) {
    std::vector<double> values(shape_numel(shape), fill);
    if (stddev > 0.0) {
        Rng rng(derive_seed(config_.seed, "init:" + name));
        for (auto& v : values) v = rng.normal(0.0, stddev);
    }
    params_.push_back({name, Tensor::parameter(std::move(shape), std::move(values))});
}

TransformerModel::TransformerModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.d_model;
    const std::size_t f = d * config_.ffn_multiplier;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_std = w_std / std::sqrt(2.0 * static_cast<double>(config_.n_layers));

    add_param("embed.tokens", {config_.vocab_size, d}, 1.0);
    if (config_.pe.kind == PeKind::learnable) add_param("embed.positions", {config_.pe.max_positions, d}, 0.1);
    for (std::size_t i = 0; i < config_.n_layers; ++i) {
        const std::string p = layer_prefix(i);
        add_param(p + "ln1.gain", {d}, 0.0, 1.0);
        add_param(p + "ln1.bias", {d}, 0.0);
        add_param(p + "attn.wq", {d, d}, w_std);
        add_param(p + "attn.wk", {d, d}, w_std);
        add_param(p + "attn.wv", {d, d}, w_std);
        add_param(p + "attn.wo", {d, d}, out_std);
        add_param(p + "ln2.gain", {d}, 0.0, 1.0);
        add_param(p + "ln2.bias", {d}, 0.0);
        add_param(p + "ffn.w1", {d, f}, w_std);
        add_param(p + "ffn.b1", {f}, 0.0);
        add_param(p + "ffn.w2", {f, d}, out_std / 2.0);
        add_param(p + "ffn.b2", {d}, 0.0);
    }
    add_param("final.ln_gain", {d}, 0.0, 1.0);
    add_param("final.ln_bias", {d}, 0.0);
    if (config_.head == HeadKind::scalar) {
        add_param("head.w1", {d, d}, w_std);
        add_param("head.b1", {d}, 0.0);
        add_param("head.w2", {d, 1}, 0.0);  // zero-initialized output layer
        add_param("head.b2", {1}, 0.0);
    } else {
        add_param("head.w", {d, config_.vocab_size}, w_std);
        add_param("head.b", {config_.vocab_size}, 0.0);
    }
}

Tensor& TransformerModel::param(std::string_view name) {
    for (auto& p : params_)
        if (p.name == name) return p.tensor;
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Tensor& TransformerModel::param(std::string_view name) const {
    return const_cast<TransformerModel*>(this)->param(name);
}

std::size_t TransformerModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

Tensor TransformerModel::hidden(const std::vector<TokenSequence>& batch, std::size_t stop_layer, std::size_t probe_head,
                                Tensor* probe) const {
    if (batch.empty()) throw std::invalid_argument("forward: empty batch");
    const std::size_t B = batch.size();
    const std::size_t T = batch.front().size();
    if (T == 0) throw std::invalid_argument("forward: empty sequence");
    std::vector<std::size_t> ids;
    ids.reserve(B * T);
    for (const auto& seq : batch) {
        if (seq.size() != T) throw std::invalid_argument("forward: batch sequences must share one length");
        for (auto id : seq) {
            if (id >= config_.vocab_size) {
                throw std::invalid_argument("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                                            std::to_string(config_.vocab_size));
            }
            ids.push_back(id);
        }
    }
    const auto& pe = config_.pe;
    if (pe.kind == PeKind::learnable && T > pe.max_positions) {
        throw std::invalid_argument("forward: sequence length " + std::to_string(T) + " exceeds learnable max positions " +
                                    std::to_string(pe.max_positions));
    }

    const std::size_t d = config_.d_model;
    const std::size_t H = config_.n_heads;
    const std::size_t dh = d / H;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor x = gather_rows(param("embed.tokens"), ids);
    if (pe.kind == PeKind::learnable) {
        std::vector<std::size_t> pos(B * T);
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % T;
        x = add(x, gather_rows(param("embed.positions"), pos));
    }

    std::vector<std::uint8_t> causal(B * T * T, 0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = i + 1; j < T; ++j) causal[(b * T + i) * T + j] = 1;
    std::vector<Tensor> alibi;
    if (pe.kind == PeKind::alibi) {
        for (std::size_t h = 0; h < H; ++h) {
            std::vector<double> bias(B * T * T, 0.0);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < T; ++i)
                    for (std::size_t j = 0; j <= i; ++j) bias[(b * T + i) * T + j] = attention_bias(pe, i, j, h);
            alibi.push_back(Tensor::from({B, T, T}, std::move(bias)));
        }
    }
    Tensor rope_cos, rope_sin;
    if (pe.kind == PeKind::rope) std::tie(rope_cos, rope_sin) = rope_tables(B, T, dh, pe.rope_base);

    for (std::size_t layer = 0; layer < config_.n_layers; ++layer) {
        const std::string p = layer_prefix(layer);
        const Tensor h = norm(x, param(p + "ln1.gain"), param(p + "ln1.bias"));
        const Tensor q = reshape(matmul(h, param(p + "attn.wq")), {B, T, d});
        const Tensor k = reshape(matmul(h, param(p + "attn.wk")), {B, T, d});
        const Tensor v = reshape(matmul(h, param(p + "attn.wv")), {B, T, d});
        std::vector<Tensor> heads;
        for (std::size_t head = 0; head < H; ++head) {
            Tensor qh = slice(q, 2, head * dh, (head + 1) * dh);
            Tensor kh = slice(k, 2, head * dh, (head + 1) * dh);
            const Tensor vh = slice(v, 2, head * dh, (head + 1) * dh);
            if (pe.kind == PeKind::rope) {
                qh = rotate(qh, rope_cos, rope_sin);
                kh = rotate(kh, rope_cos, rope_sin);
            }
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (pe.kind == PeKind::alibi) scores = add(scores, alibi[head]);
            scores = masked_fill(scores, causal, -std::numeric_limits<double>::infinity());
            if (layer == stop_layer && head == probe_head && probe) {
                *probe = scores;
                return x;
            }
            heads.push_back(matmul(exp(row_log_softmax(scores)), vh));
        }
        const Tensor attn = H == 1 ? heads.front() : concat(heads, 2);
        x = add(x, matmul(reshape(attn, {B * T, d}), param(p + "attn.wo")));

        const Tensor h2 = norm(x, param(p + "ln2.gain"), param(p + "ln2.bias"));
        const Tensor ff = linear(gelu(linear(h2, param(p + "ffn.w1"), param(p + "ffn.b1"))), param(p + "ffn.w2"),
                                 param(p + "ffn.b2"));
        x = add(x, ff);
    }
    return norm(x, param("final.ln_gain"), param("final.ln_bias"));
}

Tensor TransformerModel::forward_scalar_batch(const std::vector<TokenSequence>& batch) const {
    if (config_.head != HeadKind::scalar) throw std::logic_error("forward_scalar needs a scalar-head model");
    const Tensor x = hidden(batch);
    const std::size_t B = batch.size();
    const std::size_t T = batch.front().size();
    const std::size_t d = config_.d_model;
    const Tensor last = reshape(slice(reshape(x, {B, T, d}), 1, T - 1, T), {B, d});
    const Tensor h = gelu(linear(last, param("head.w1"), param("head.b1")));
    return reshape(linear(h, param("head.w2"), param("head.b2")), {B});
}

Tensor TransformerModel::forward_lm_batch(const std::vector<TokenSequence>& batch) const {
    if (config_.head != HeadKind::lm) throw std::logic_error("forward_lm needs an LM-head model");
    return row_log_softmax(linear(hidden(batch), param("head.w"), param("head.b")));
}

double TransformerModel::forward_scalar(const TokenSequence& seq) const {
    NoGradGuard guard;
    return forward_scalar_batch({seq}).item();
}

Tensor TransformerModel::forward_lm(const TokenSequence& seq) const { return forward_lm_batch({seq}); }

Tensor TransformerModel::attention_logits(const TokenSequence& seq, std::size_t layer, std::size_t head) const {
    if (layer >= config_.n_layers || head >= config_.n_heads) throw std::out_of_range("attention_logits: no such head");
    NoGradGuard guard;
    Tensor probe;
    (void)hidden({seq}, layer, head, &probe);
    return reshape(probe, {seq.size(), seq.size()});
}

void TransformerModel::copy_from(const TransformerModel& other) {
    if (other.params_.size() != params_.size()) throw std::invalid_argument("copy_from: parameter sets differ");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto src = other.params_[i].tensor.data();
        auto dst = params_[i].tensor.mutable_data();
        if (src.size() != dst.size() || other.params_[i].name != params_[i].name) {
            throw std::invalid_argument("copy_from: parameter '" + params_[i].name + "' differs");
        }
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

// Layout: "LSCKPT 1\n", manifest byte length "\n", JSON manifest, then raw
// little-endian float64 parameter data at the manifest's element offsets.
void TransformerModel::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json manifest;
    manifest["config.d_model"] = config_.d_model;
    manifest["config.n_layers"] = config_.n_layers;
    manifest["config.n_heads"] = config_.n_heads;
    manifest["config.ffn_multiplier"] = config_.ffn_multiplier;
    manifest["config.vocab_size"] = config_.vocab_size;
    manifest["config.pe_kind"] = pe_name(config_.pe.kind);
    manifest["config.pe_max_positions"] = config_.pe.max_positions;
    manifest["config.pe_slopes"] = config_.pe.slopes;
    manifest["config.pe_rope_base"] = config_.pe.rope_base;
    manifest["config.head_kind"] = config_.head == HeadKind::scalar ? "scalar" : "lm";
    manifest["config.seed"] = config_.seed;
    std::size_t offset = 0;
    for (const auto& p : params_) {
        manifest["param." + p.name] = {{"shape", p.tensor.shape()}, {"offset", offset}};
        offset += p.tensor.numel();
    }
    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << kMagic << '\n' << text.size() << '\n' << text;
    for (const auto& p : params_) {
        const auto data = p.tensor.data();
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

TransformerModel TransformerModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != kMagic) throw std::runtime_error("not a checkpoint (bad header): " + path.string());
    std::string len_line;
    std::getline(in, len_line);
    std::string text(std::stoul(len_line), '\0');
    in.read(text.data(), static_cast<std::streamsize>(text.size()));
    const auto manifest = nlohmann::json::parse(text);

    ModelConfig cfg;
    cfg.d_model = manifest.at("config.d_model");
    cfg.n_layers = manifest.at("config.n_layers");
    cfg.n_heads = manifest.at("config.n_heads");
    cfg.ffn_multiplier = manifest.at("config.ffn_multiplier");
    cfg.vocab_size = manifest.at("config.vocab_size");
    cfg.pe.kind = parse_pe(manifest.at("config.pe_kind").get<std::string>());
    cfg.pe.max_positions = manifest.at("config.pe_max_positions");
    cfg.pe.slopes = manifest.at("config.pe_slopes").get<std::vector<double>>();
    cfg.pe.rope_base = manifest.at("config.pe_rope_base");
    cfg.head = manifest.at("config.head_kind") == "scalar" ? HeadKind::scalar : HeadKind::lm;
    cfg.seed = manifest.at("config.seed");

    TransformerModel model(cfg);
    const auto data_start = in.tellg();
    for (auto& p : model.params_) {
        const auto& entry = manifest.at("param." + p.name);
        if (entry.at("shape").get<Shape>() != p.tensor.shape()) {
            throw std::runtime_error("checkpoint shape mismatch for " + p.name);
        }
        const std::size_t offset = entry.at("offset");
        auto dst = p.tensor.mutable_data();
        in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(double)));
        in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size_bytes()));
        if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    }
    return model;
}

}  // namespace longshort
