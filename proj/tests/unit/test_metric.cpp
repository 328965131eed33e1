#include <gtest/gtest.h>

#include <cmath>

#include "json.hpp"
#include "longshort/core/ops.hpp"
#include "longshort/core/optim.hpp"
#include "longshort/core/rng.hpp"
#include "longshort/metric/misalign.hpp"

using namespace longshort;

namespace {

std::vector<double> log_of(std::vector<double> p) {
    for (double& v : p) v = std::log(v);
    return p;
}

std::vector<double> random_log_row(Rng& rng, std::size_t n) {
    std::vector<double> p(n);
    double total = 0.0;
    for (double& v : p) total += (v = 0.05 + rng.uniform());
    for (double& v : p) v = std::log(v / total);
    return p;
}

ModelConfig lm_config(std::size_t vocab, std::uint64_t seed, PeKind pe = PeKind::rope) {
    ModelConfig c;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ffn_multiplier = 2;
    c.vocab_size = vocab;
    c.pe.kind = pe;
    if (pe == PeKind::alibi) c.pe.slopes = PositionalEncoding::alibi_slopes(c.n_heads);
    c.head = HeadKind::lm;
    c.seed = seed;
    return c;
}

TokenSequence random_tokens(Rng& rng, std::size_t len, std::size_t vocab) {
    TokenSequence s(len);
    for (auto& t : s) t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(vocab - 1)));
    return s;
}

std::vector<double> last_row(const TransformerModel& m, const TokenSequence& prefix) {
    NoGradGuard g;
    const Tensor lp = m.forward_lm(prefix);
    const auto d = lp.data();
    const std::size_t V = lp.dim(1);
    return {d.end() - static_cast<std::ptrdiff_t>(V), d.end()};
}

}  // namespace

TEST(Divergence, SceExamples) {
    const auto p = log_of({0.5, 0.5});
    EXPECT_NEAR(sce(p, p), 2.0 * std::log(2.0), 1e-15);
    const auto a = log_of({0.9, 0.1});
    const auto b = log_of({0.1, 0.9});
    EXPECT_NEAR(sce(a, b), -2.0 * (0.1 * std::log(0.9) + 0.9 * std::log(0.1)), 1e-12);
}

TEST(Divergence, SceSymmetricAndAboveEntropies) {
    Rng rng(41);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 12));
        const auto p = random_log_row(rng, n);
        const auto q = random_log_row(rng, n);
        EXPECT_EQ(sce(p, q), sce(q, p));
        // Gibbs: cross-entropy dominates entropy on each side.
        EXPECT_GE(sce(p, q), entropy(p) + entropy(q) - 1e-12);
        // SCE minus both entropies is the symmetric KL.
        double kl = 0.0;
        for (std::size_t k = 0; k < n; ++k) kl += (std::exp(p[k]) - std::exp(q[k])) * (p[k] - q[k]);
        EXPECT_NEAR(sce(p, q) - entropy(p) - entropy(q), kl, 1e-10);
    }
}

TEST(Divergence, SceEqualityOnlyWhenIdentical) {
    Rng rng(5);
    const auto p = random_log_row(rng, 6);
    EXPECT_NEAR(sce(p, p), 2.0 * entropy(p), 1e-12);
    auto q = p;
    q[0] = std::log(std::exp(q[0]) - 0.01);
    q[1] = std::log(std::exp(q[1]) + 0.01);
    EXPECT_GT(sce(p, q), entropy(p) + entropy(q) + 1e-8);
}

TEST(Divergence, L2Examples) {
    EXPECT_NEAR(l2_divergence(log_of({1.0 - 1e-300, 1e-300}), log_of({1e-300, 1.0 - 1e-300})), 2.0, 1e-12);
    const auto p = log_of({0.25, 0.25, 0.5});
    EXPECT_EQ(l2_divergence(p, p), 0.0);
    EXPECT_NEAR(l2_divergence(log_of({0.5, 0.5}), log_of({0.25, 0.75})), 0.125, 1e-15);
}

TEST(Divergence, AppendixVariantIsAsymmetric) {
    const auto a = log_of({0.9, 0.1});
    const auto b = log_of({0.3, 0.7});
    EXPECT_NEAR(appendix_e_divergence(a, b), -(0.3 * std::log(0.9) + 0.7 * std::log(0.1)) + entropy(a) * 1.0, 1e-12);
    EXPECT_NE(appendix_e_divergence(a, b), appendix_e_divergence(b, a));
}

TEST(Divergence, RejectsBadRows) {
    EXPECT_THROW(sce(log_of({0.5, 0.4}), log_of({0.5, 0.5})), std::invalid_argument);
    EXPECT_THROW(sce(log_of({0.5, 0.5}), log_of({0.2, 0.3, 0.5})), std::invalid_argument);
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_THROW(sce(std::vector<double>{0.0, -inf}, log_of({0.5, 0.5})), std::invalid_argument);
    EXPECT_THROW(parse_divergence("kl"), std::invalid_argument);
    for (auto d : {Divergence::sce, Divergence::l2, Divergence::appendix_e}) EXPECT_EQ(parse_divergence(divergence_name(d)), d);
}

TEST(Divergence, RowsTensorMatchesScalar) {
    Rng rng(9);
    for (auto d : {Divergence::sce, Divergence::l2, Divergence::appendix_e}) {
        std::vector<double> a, b;
        double expect = 0.0;
        for (int r = 0; r < 5; ++r) {
            const auto p = random_log_row(rng, 4);
            const auto q = random_log_row(rng, 4);
            expect += divergence(d, p, q) / 5.0;
            a.insert(a.end(), p.begin(), p.end());
            b.insert(b.end(), q.begin(), q.end());
        }
        const Tensor t = divergence_rows(d, Tensor::from({5, 4}, a), Tensor::from({5, 4}, b));
        EXPECT_NEAR(t.item(), expect, 1e-12) << divergence_name(d);
    }
}

TEST(OverlapPlan, Examples) {
    const auto a = overlap_plan(8, 2);
    EXPECT_EQ(a.full_length, 10u);
    EXPECT_EQ(a.pairs(), (std::vector<std::pair<std::size_t, std::size_t>>{{6, 4}, {7, 5}}));
    EXPECT_EQ(overlap_plan(8, 4).pair_count(), 0u);
    EXPECT_EQ(overlap_plan(10, 1).context_lengths(),
              (std::vector<std::pair<std::size_t, std::size_t>>{{7, 6}, {8, 7}, {9, 8}, {10, 9}}));
}

TEST(OverlapPlan, Invalid) {
    EXPECT_THROW(overlap_plan(8, 0), std::invalid_argument);
    EXPECT_THROW(overlap_plan(8, 5), std::invalid_argument);
    EXPECT_NO_THROW(overlap_plan(8, 7, ContextFloor::none));
    EXPECT_EQ(overlap_plan(8, 3, ContextFloor::none).pair_count(), 5u);
}

TEST(OverlapPlan, PairCountAndContextFloorExhaustive) {
    for (std::size_t l = 2; l <= 64; ++l) {
        for (std::size_t e = 1; e <= l / 2; ++e) {
            const auto plan = overlap_plan(l, e);
            EXPECT_EQ(plan.pair_count(), l - l / 2 - e);
            EXPECT_EQ(plan.pairs().size(), plan.pair_count());
            for (const auto& [c1, c2] : plan.context_lengths()) {
                EXPECT_EQ(c1, c2 + e);
                EXPECT_GT(c2, l / 2);
                EXPECT_LE(c1, l);
            }
            // Aligned positions refer to the same absolute token.
            for (const auto& [i, j] : plan.pairs()) EXPECT_EQ(i, j + e);
        }
    }
}

TEST(CombinedLoss, MatchesPerPairPrefixOracle) {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t l = static_cast<std::size_t>(rng.uniform_int(2, 10));
        const std::size_t e = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(l / 2)));
        const auto variant = static_cast<Divergence>(trial % 3);
        const double alpha = rng.uniform() * 2.0;
        const TransformerModel model(lm_config(5, static_cast<std::uint64_t>(trial), static_cast<PeKind>(trial % 4)));
        const auto plan = overlap_plan(l, e);
        std::vector<TokenSequence> batch;
        for (int b = 0; b < 3; ++b) batch.push_back(random_tokens(rng, l + e, 5));

        double ce = 0.0, mis = 0.0;
        for (const auto& s : batch) {
            const TokenSequence s1(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(l));
            const TokenSequence s2(s.begin() + static_cast<std::ptrdiff_t>(e), s.end());
            for (const auto* w : {&s1, &s2}) {
                for (std::size_t t = 0; t + 1 < l; ++t) {
                    const TokenSequence prefix(w->begin(), w->begin() + static_cast<std::ptrdiff_t>(t + 1));
                    ce -= last_row(model, prefix)[(*w)[t + 1]] / (2.0 * static_cast<double>(batch.size() * (l - 1)));
                }
            }
            for (const auto& [c1, c2] : plan.context_lengths()) {
                const auto p = last_row(model, TokenSequence(s1.begin(), s1.begin() + static_cast<std::ptrdiff_t>(c1)));
                const auto q = last_row(model, TokenSequence(s2.begin(), s2.begin() + static_cast<std::ptrdiff_t>(c2)));
                mis += divergence(variant, p, q) / static_cast<double>(batch.size() * plan.pair_count());
            }
        }
        const auto got = combined_loss(model, batch, alpha, plan, variant);
        EXPECT_NEAR(got.ce.item(), ce, 1e-12);
        EXPECT_NEAR(got.misalign.item(), mis, 1e-12);
        EXPECT_NEAR(got.total.item(), ce + alpha * mis, 1e-12);
    }
}

TEST(CombinedLoss, AlphaZeroIsPlainCe) {
    Rng rng(3);
    const TransformerModel model(lm_config(4, 1));
    std::vector<TokenSequence> batch{random_tokens(rng, 11, 4), random_tokens(rng, 11, 4)};
    const auto out = combined_loss(model, batch, 0.0, overlap_plan(8, 3));
    EXPECT_EQ(out.total.item(), out.ce.item());
    EXPECT_GT(out.misalign.item(), 0.0);
}

TEST(CombinedLoss, NoPairsGivesZeroMisalign) {
    Rng rng(4);
    const TransformerModel model(lm_config(4, 2));
    const auto out = combined_loss(model, {random_tokens(rng, 12, 4)}, 1.0, overlap_plan(8, 4));
    EXPECT_EQ(out.misalign.item(), 0.0);
    EXPECT_EQ(out.total.item(), out.ce.item());
}

TEST(CombinedLoss, RejectsWrongLength) {
    const TransformerModel model(lm_config(4, 2));
    EXPECT_THROW(combined_loss(model, {TokenSequence(9, 0)}, 1.0, overlap_plan(8, 2)), std::invalid_argument);
}

TEST(CombinedLoss, GradientCheck) {
    Rng rng(6);
    TransformerModel model(lm_config(4, 8));
    std::vector<TokenSequence> batch{random_tokens(rng, 10, 4), random_tokens(rng, 10, 4)};
    const auto plan = overlap_plan(8, 2);
    std::vector<Tensor> params;
    for (auto& np : model.parameters()) params.push_back(np.tensor);
    for (auto d : {Divergence::sce, Divergence::l2, Divergence::appendix_e}) {
        const double err = grad_check([&] { return combined_loss(model, batch, 0.7, plan, d).total; }, params);
        EXPECT_LT(err, 1e-4) << divergence_name(d);
    }
}

TEST(Misalign, ConstantModelScoresZeroL2) {
    TransformerModel model(lm_config(4, 11));
    for (double& v : model.param("head.w").mutable_data()) v = 0.0;
    Rng rng(12);
    std::vector<TokenSequence> windows;
    for (int i = 0; i < 6; ++i) windows.push_back(random_tokens(rng, 24, 4));
    MisalignConfig cfg;
    cfg.l_train = 16;
    cfg.variant = Divergence::l2;
    cfg.n_samples = 50;
    EXPECT_NEAR(misalign_estimate(model, windows, cfg, 1).estimate, 0.0, 1e-20);
    EXPECT_NEAR(misalign_exact(model, windows, cfg), 0.0, 1e-20);
}

TEST(Misalign, MonteCarloAgreesWithExact) {
    const TransformerModel model(lm_config(2, 13, PeKind::alibi));
    Rng rng(14);
    std::vector<TokenSequence> windows;
    for (int i = 0; i < 8; ++i) windows.push_back(random_tokens(rng, 20, 2));
    MisalignConfig cfg;
    cfg.l_train = 12;
    cfg.n_samples = 600;
    const double exact = misalign_exact(model, windows, cfg);
    const auto mc = misalign_estimate(model, windows, cfg, 77);
    EXPECT_GT(mc.std_error, 0.0);
    EXPECT_LE(std::abs(mc.estimate - exact), 3.0 * mc.std_error);
}

TEST(Misalign, VariantsNonNegative) {
    const TransformerModel model(lm_config(4, 15));
    Rng rng(16);
    std::vector<TokenSequence> windows;
    for (int i = 0; i < 4; ++i) windows.push_back(random_tokens(rng, 16, 4));
    MisalignConfig cfg;
    cfg.l_train = 10;
    const double s = misalign_exact(model, windows, cfg);
    cfg.variant = Divergence::l2;
    EXPECT_GT(s, 0.0);
    EXPECT_GE(misalign_exact(model, windows, cfg), 0.0);
}

TEST(Misalign, Deterministic) {
    const TransformerModel model(lm_config(4, 17));
    Rng rng(18);
    std::vector<TokenSequence> windows;
    for (int i = 0; i < 4; ++i) windows.push_back(random_tokens(rng, 16, 4));
    MisalignConfig cfg;
    cfg.l_train = 10;
    cfg.n_samples = 40;
    const auto a = misalign_estimate(model, windows, cfg, 5);
    const auto b = misalign_estimate(model, windows, cfg, 5);
    EXPECT_EQ(a.estimate, b.estimate);
    const auto j = nlohmann::json::parse(a.to_json());
    for (const char* key : {"variant", "l_train", "n_samples", "estimate", "std_error", "seed"}) EXPECT_TRUE(j.contains(key));
    EXPECT_EQ(j.at("variant"), "sce");
}

TEST(Misalign, ShortWindowNamesRequiredLength) {
    const TransformerModel model(lm_config(4, 19));
    MisalignConfig cfg;
    cfg.l_train = 10;
    try {
        (void)misalign_estimate(model, {TokenSequence(12, 0)}, cfg, 1);
        FAIL() << "expected an error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("14"), std::string::npos) << e.what();
    }
}

TEST(Misalign, ConfigValidation) {
    MisalignConfig cfg;
    cfg.l_train = 10;
    cfg.extra_hi = 6;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.floor = ContextFloor::none;
    EXPECT_NO_THROW(cfg.validate());
    cfg.alpha = -1;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
