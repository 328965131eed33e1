#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "longshort/trainer/trainer.hpp"

namespace longshort {

/// Byte-level vocabulary: ids 0..255 are bytes, then three reserved ids.
namespace byte_vocab {
inline constexpr std::size_t bos = 256;
inline constexpr std::size_t eos = 257;
inline constexpr std::size_t pad = 258;
inline constexpr std::size_t size = 259;
}  // namespace byte_vocab

TokenSequence tokenize(std::string_view text);
/// Inverse of tokenize; throws on reserved ids.
std::string detokenize(const TokenSequence& ids);

struct Corpus {
    TokenSequence tokens;
    std::size_t split = 0;  ///< train = [0, split), validation = [split, size)

    [[nodiscard]] std::span<const std::size_t> train() const { return {tokens.data(), split}; }
    [[nodiscard]] std::span<const std::size_t> validation() const { return {tokens.data() + split, tokens.size() - split}; }
};

/// Reads the file as raw bytes. The train part holds floor(n * split_fraction) bytes.
Corpus ingest_corpus(const std::filesystem::path& path, double split_fraction = 0.9);

/// Pearson product-moment correlation; empty when either side has zero variance.
std::optional<double> pearson(const std::vector<double>& xs, const std::vector<double>& ys);

struct VariantSpec {
    std::string label;
    PeKind pe = PeKind::nope;
    double alpha = 0.0;
    std::size_t l_train = 128;
    std::uint64_t seed = 0;
};

struct GridConfig {
    /// Shared model size and optimizer settings; pe, alpha, l_train and seed come from each variant.
    TrainConfig base;
    std::vector<std::size_t> eval_lengths{512};
    std::size_t ppl_windows = 64;
    std::size_t misalign_samples = 1024;
    std::uint64_t eval_seed = 0;
    /// When set, each variant's checkpoint and TrainReport are written here.
    std::filesystem::path out_dir;
};

struct GridRow {
    std::string label;
    PeKind pe = PeKind::nope;
    double alpha = 0.0;
    std::size_t l_train = 0;
    double loss_train = 0.0;   ///< log-ppl at l_train on the validation split
    double misalign = 0.0;     ///< SCE misalignment on the validation split
    double long_logppl = 0.0;  ///< log-ppl at the largest eval length
    std::vector<std::pair<std::size_t, double>> logppl_by_length;
};

struct CorrelationReport {
    std::vector<GridRow> rows;
    std::optional<double> r_misalign;  ///< r(misalign, long log-ppl)
    std::optional<double> r_train;     ///< r(loss_train, long log-ppl)

    /// `label,pe,alpha,l_train,loss_train,misalign,long_logppl`
    void write_csv(const std::filesystem::path& path) const;
    [[nodiscard]] std::string to_json() const;
    [[nodiscard]] const GridRow& row(std::string_view label) const;
};

/// Throws on fewer than 3 variants or duplicate labels.
void validate_variants(const std::vector<VariantSpec>& variants);

/// Trains every variant on the train split and measures it on the validation split.
/// Rows come back sorted by label.
CorrelationReport run_grid(const std::vector<VariantSpec>& variants, const Corpus& corpus, const GridConfig& cfg);

/// The validation-split measurements used by run_grid, for one trained model.
GridRow measure_variant(const TransformerModel& model, const VariantSpec& spec, const Corpus& corpus, const GridConfig& cfg);

}  // namespace longshort
