#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "longshort/lm/experiment.hpp"
#include "longshort/core/rng.hpp"

using namespace longshort;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& bytes) {
    const auto p = std::filesystem::temp_directory_path() / ("longshort_" + name);
    std::ofstream(p, std::ios::binary) << bytes;
    return p;
}

std::string story_text(std::size_t n) {
    std::string s;
    const std::string words[] = {"the cat ", "sat on ", "a mat. ", "then it ", "ran off. "};
    for (std::size_t i = 0; s.size() < n; ++i) s += words[(i * 7 + i / 5) % 5];
    return s.substr(0, n);
}

}  // namespace

TEST(Corpus, SplitArithmetic) {
    const auto p = write_temp("kib.txt", std::string(1024, 'x'));
    const auto c = ingest_corpus(p, 0.9);
    EXPECT_EQ(c.train().size(), 921u);
    EXPECT_EQ(c.validation().size(), 103u);
    EXPECT_EQ(ingest_corpus(p, 0.9).split, c.split);
    std::filesystem::remove(p);
}

TEST(Corpus, TokenizeRoundTrip) {
    EXPECT_EQ(tokenize("ab"), (TokenSequence{97, 98}));
    std::string all;
    for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
    EXPECT_EQ(detokenize(tokenize(all)), all);
    EXPECT_THROW(detokenize({byte_vocab::bos}), std::invalid_argument);
}

TEST(Corpus, Errors) {
    const auto empty = write_temp("empty.txt", "");
    EXPECT_THROW(ingest_corpus(empty), std::runtime_error);
    std::filesystem::remove(empty);
    EXPECT_THROW(ingest_corpus("/nonexistent/longshort.txt"), std::runtime_error);
    const auto p = write_temp("small.txt", "abc");
    EXPECT_THROW(ingest_corpus(p, 1.5), std::invalid_argument);
    std::filesystem::remove(p);
}

TEST(Pearson, Examples) {
    EXPECT_NEAR(*pearson({1, 2, 3}, {2, 4, 6}), 1.0, 1e-15);
    EXPECT_NEAR(*pearson({1, 2, 3}, {3, 2, 1}), -1.0, 1e-15);
    // Hand computation: Sxy = 4.7, Sxx = 5, Syy = 4.5.
    EXPECT_NEAR(*pearson({1, 2, 3, 4}, {1.1, 1.9, 3.2, 3.8}), 4.7 / std::sqrt(22.5), 1e-12);
    EXPECT_NEAR(*pearson({1, 2, 3, 4}, {1.1, 1.9, 3.2, 3.8}), 0.99085, 1e-5);
}

TEST(Pearson, DegenerateAndInvalid) {
    EXPECT_FALSE(pearson({1, 1, 1}, {1, 2, 3}).has_value());
    EXPECT_FALSE(pearson({1, 2, 3}, {5, 5, 5}).has_value());
    EXPECT_THROW(pearson({1, 2}, {1, 2}), std::invalid_argument);
    EXPECT_THROW(pearson({1, 2, 3}, {1, 2}), std::invalid_argument);
}

TEST(Pearson, SymmetricAndAffineInvariant) {
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> x(8), y(8), xs(8), ys(8);
        const double a = 0.1 + 10 * rng.uniform(), b = rng.normal(0, 5), c = 0.1 + 10 * rng.uniform(), d = rng.normal(0, 5);
        for (int i = 0; i < 8; ++i) {
            x[i] = rng.normal();
            y[i] = x[i] + rng.normal();
            xs[i] = a * x[i] + b;
            ys[i] = c * y[i] + d;
        }
        const double r = *pearson(x, y);
        EXPECT_GE(r, -1.0);
        EXPECT_LE(r, 1.0);
        EXPECT_NEAR(*pearson(y, x), r, 1e-12);
        EXPECT_NEAR(*pearson(xs, ys), r, 1e-12);
    }
}

TEST(Grid, VariantValidation) {
    EXPECT_THROW(validate_variants({{"a"}}), std::invalid_argument);
    EXPECT_THROW(validate_variants({{"a"}, {"b"}, {"a"}}), std::invalid_argument);
    EXPECT_NO_THROW(validate_variants({{"a"}, {"b"}, {"c"}}));
}

TEST(Grid, TinyGridIsReproducibleAndConsistent) {
    const auto path = write_temp("grid_corpus.txt", story_text(6000));
    const auto corpus = ingest_corpus(path, 0.8);
    GridConfig cfg;
    cfg.base.model.d_model = 8;
    cfg.base.model.n_layers = 1;
    cfg.base.model.n_heads = 2;
    cfg.base.steps = 3;
    cfg.base.batch = 2;
    cfg.eval_lengths = {32, 48};
    cfg.ppl_windows = 4;
    cfg.misalign_samples = 16;
    cfg.eval_seed = 3;
    cfg.out_dir = std::filesystem::temp_directory_path() / "longshort_grid";
    const std::vector<VariantSpec> variants{{"rope-a0", PeKind::rope, 0.0, 16, 1},
                                            {"nope-a0", PeKind::nope, 0.0, 16, 1},
                                            {"nope-a1", PeKind::nope, 0.1, 16, 1}};
    const auto a = run_grid(variants, corpus, cfg);
    ASSERT_EQ(a.rows.size(), 3u);
    EXPECT_EQ(a.rows[0].label, "nope-a0");
    EXPECT_EQ(a.rows[2].label, "rope-a0");
    EXPECT_EQ(a.rows[2].long_logppl, a.rows[2].logppl_by_length.back().second);

    const auto model = TransformerModel::load(cfg.out_dir / "nope-a1.ckpt");
    EXPECT_NEAR(a.row("nope-a1").loss_train, eval_ppl_at_length(model, corpus.validation(), 16, 4, derive_seed(3, "ppl")), 1e-9);
    EXPECT_TRUE(std::filesystem::exists(cfg.out_dir / "nope-a1.train.csv"));

    const auto b = run_grid(variants, corpus, cfg);
    EXPECT_EQ(a.to_json(), b.to_json());
    const auto json = nlohmann::json::parse(a.to_json());
    EXPECT_EQ(json.at("rows").size(), 3u);
    EXPECT_TRUE(json.contains("r_misalign_long_logppl"));

    const auto csv = cfg.out_dir / "grid.csv";
    a.write_csv(csv);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "label,pe,alpha,l_train,loss_train,misalign,long_logppl");
    std::filesystem::remove_all(cfg.out_dir);
    std::filesystem::remove(path);
}
