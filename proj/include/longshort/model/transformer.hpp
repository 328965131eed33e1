#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "longshort/core/optim.hpp"
#include "longshort/core/tensor.hpp"

namespace longshort {

enum class PeKind { nope, learnable, alibi, rope };

std::string_view pe_name(PeKind kind);
PeKind parse_pe(std::string_view name);

struct PositionalEncoding {
    PeKind kind = PeKind::nope;
    std::size_t max_positions = 1024;  ///< learnable only
    std::vector<double> slopes;        ///< alibi only, one per head
    double rope_base = 10000.0;        ///< rope only

    /// Standard ALiBi slopes 2^(-8k/n_heads), k = 1..n_heads.
    static std::vector<double> alibi_slopes(std::size_t n_heads);
};

/// Additive attention-score bias between a query and an earlier key.
double attention_bias(const PositionalEncoding& pe, std::size_t query_pos, std::size_t key_pos, std::size_t head);

enum class HeadKind { scalar, lm };

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t ffn_multiplier = 4;
    std::size_t vocab_size = 4;
    PositionalEncoding pe;
    HeadKind head = HeadKind::scalar;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Token ids shared by the synthetic tasks.
namespace synth_vocab {
inline constexpr std::size_t zero = 0;
inline constexpr std::size_t one = 1;
inline constexpr std::size_t bos = 2;
inline constexpr std::size_t eos = 3;
inline constexpr std::size_t size = 4;
}  // namespace synth_vocab

using TokenSequence = std::vector<std::size_t>;

/// Pre-norm decoder-only transformer with causal attention.
class TransformerModel {
public:
    explicit TransformerModel(ModelConfig config);

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] std::vector<NamedParam>& parameters() { return params_; }
    [[nodiscard]] const std::vector<NamedParam>& parameters() const { return params_; }
    [[nodiscard]] Tensor& param(std::string_view name);
    [[nodiscard]] const Tensor& param(std::string_view name) const;
    [[nodiscard]] std::size_t parameter_count() const;

    /// Scalar predictions for a batch of equal-length sequences, shape [B].
    [[nodiscard]] Tensor forward_scalar_batch(const std::vector<TokenSequence>& batch) const;
    /// Next-token log-probabilities for a batch of equal-length sequences, shape [B*T, V].
    [[nodiscard]] Tensor forward_lm_batch(const std::vector<TokenSequence>& batch) const;

    [[nodiscard]] double forward_scalar(const TokenSequence& seq) const;
    /// Row t is the log-distribution of the token after position t, shape [T, V].
    [[nodiscard]] Tensor forward_lm(const TokenSequence& seq) const;

    /// Pre-softmax attention logits of layer `layer`, head `head`, for one sequence, shape [T, T].
    /// Future positions hold -inf.
    [[nodiscard]] Tensor attention_logits(const TokenSequence& seq, std::size_t layer, std::size_t head) const;

    void save(const std::filesystem::path& path) const;
    static TransformerModel load(const std::filesystem::path& path);

    /// Replaces every parameter value with a copy of `other`'s (same config required).
    void copy_from(const TransformerModel& other);

private:
    [[nodiscard]] Tensor hidden(const std::vector<TokenSequence>& batch, std::size_t stop_layer = SIZE_MAX,
                                std::size_t probe_head = 0, Tensor* probe = nullptr) const;
    void add_param(const std::string& name, Shape shape, double stddev, double fill = 0.0);

    ModelConfig config_;
    std::vector<NamedParam> params_;
};

}  // namespace longshort
