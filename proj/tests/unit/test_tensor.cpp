#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "longshort/core/ops.hpp"
#include "longshort/core/optim.hpp"
#include "longshort/core/rng.hpp"
#include "test_util.hpp"

using namespace longshort;

TEST(Tensor, ShapeAndDataMustAgree) {
    EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
    EXPECT_THROW(Tensor::zeros({}), ShapeError);
    const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.dim(1), 3u);
}

TEST(Ops, MatmulIdentity) {
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor m = Tensor::from({2, 2}, {3, 4, 5, 6});
    const Tensor out = matmul(eye, m);
    EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Ops, RowLogSoftmaxOfZeros) {
    const Tensor out = row_log_softmax(Tensor::from({1, 2}, {0, 0}));
    EXPECT_NEAR(out.data()[0], -std::log(2.0), 1e-15);
    EXPECT_NEAR(out.data()[1], -std::log(2.0), 1e-15);
}

TEST(Ops, ExpLogRoundTrip) {
    EXPECT_NEAR(exp(log(Tensor::scalar(2.5))).item(), 2.5, 1e-12);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
    try {
        (void)matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("matmul"), std::string::npos);
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[4,5]"), std::string::npos);
    }
    EXPECT_THROW((void)add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    // Only scalar-times-tensor broadcasting.
    EXPECT_THROW((void)mul(Tensor::zeros({2, 3}), Tensor::zeros({3})), ShapeError);
    EXPECT_NO_THROW((void)mul(Tensor::scalar(2.0), Tensor::zeros({3})));
}

TEST(Ops, DomainErrors) {
    EXPECT_THROW((void)log(Tensor::from({2}, {1.0, -1.0})), DomainError);
    EXPECT_THROW((void)sqrt(Tensor::scalar(-0.5)), DomainError);
    EXPECT_THROW((void)power(Tensor::scalar(-2.0), 0.5), DomainError);
    EXPECT_NO_THROW((void)power(Tensor::scalar(-2.0), 3.0));
    EXPECT_TRUE(std::isinf(log(Tensor::scalar(0.0)).item()));
}

TEST(Ops, RowLogSoftmaxNormalizedAndShiftInvariant) {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(5 * 7);
        for (auto& v : x) v = rng.normal(0.0, 5.0);
        std::vector<double> shifted(x);
        for (std::size_t r = 0; r < 5; ++r) {
            const double c = rng.normal(0.0, 20.0);
            for (std::size_t j = 0; j < 7; ++j) shifted[r * 7 + j] += c;
        }
        const Tensor a = row_log_softmax(Tensor::from({5, 7}, x));
        const Tensor b = row_log_softmax(Tensor::from({5, 7}, shifted));
        for (std::size_t r = 0; r < 5; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                total += std::exp(a.data()[r * 7 + j]);
                EXPECT_NEAR(a.data()[r * 7 + j], b.data()[r * 7 + j], 1e-12);
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
}

TEST(Backward, SquareAndMean) {
    Tensor x = Tensor::parameter({1}, {3.0});
    backward(mul(x, x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);

    Tensor y = Tensor::parameter({2}, {1.0, 4.0});
    backward(mean(y));
    EXPECT_DOUBLE_EQ(y.grad()[0], 0.5);
    EXPECT_DOUBLE_EQ(y.grad()[1], 0.5);
}

TEST(Backward, AccumulatesUntilZeroed) {
    Tensor x = Tensor::parameter({1}, {3.0});
    backward(mul(x, x));
    backward(mul(x, x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
    x.zero_grad();
    backward(mul(x, x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, RejectsNonScalarRoot) {
    Tensor x = Tensor::parameter({2}, {1.0, 2.0});
    EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Backward, CrossEntropyCompositeMatchesFiniteDifferences) {
    Rng rng(11);
    Tensor p = Tensor::parameter({1, 6}, testutil::normals(rng, 6));
    Tensor q = Tensor::parameter({1, 6}, testutil::normals(rng, 6));
    auto f = [&] { return sum(mul(exp(row_log_softmax(p)), row_log_softmax(q))); };
    EXPECT_LT(grad_check(f, {p, q}, 1e-5), 1e-4);
}

TEST(Backward, BitwiseRepeatable) {
    auto run = [] {
        Rng rng(5);
        Tensor w = Tensor::parameter({4, 3}, testutil::normals(rng, 12));
        Tensor x = Tensor::from({2, 4}, testutil::normals(rng, 8));
        backward(mean(gelu(layer_norm(matmul(x, w)))));
        return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x = Tensor::parameter({2}, {1.0, 2.0});
    NoGradGuard guard;
    const Tensor y = scale(x, 3.0);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(y.parent_count(), 0u);
}

TEST(GradCheck, SumOfSquares) {
    Tensor x = Tensor::parameter({3}, {1.0, 2.0, 3.0});
    EXPECT_LT(grad_check([&] { return sum(mul(x, x)); }, {x}, 1e-5), 1e-6);
}

TEST(GradCheck, NonFiniteObjectiveThrows) {
    Tensor x = Tensor::parameter({1}, {0.0});
    EXPECT_THROW(grad_check([&] { return log(x); }, {x}, 1e-5), std::domain_error);
}

// Finite-difference check of every operation kind at 10 random points.
TEST(GradCheck, EveryOpKind) {
    const auto cases = testutil::op_cases();
    for (int k = static_cast<int>(OpKind::matmul); k <= static_cast<int>(OpKind::pick); ++k) {
        const auto kind = static_cast<OpKind>(k);
        ASSERT_TRUE(cases.count(kind)) << "no gradient case for " << op_name(kind);
    }
    for (const auto& [kind, make] : cases) {
        for (std::uint64_t point = 0; point < 10; ++point) {
            Rng rng(derive_seed(point, op_name(kind)));
            auto c = make(rng);
            const double err = grad_check(c.objective, c.params, 1e-5);
            EXPECT_LT(err, 1e-4) << op_name(kind) << " point " << point;
        }
    }
}

TEST(Adam, ZeroGradLeavesParamsUnchanged) {
    std::vector<NamedParam> params{{"w", Tensor::parameter({3}, {1.0, -2.0, 0.5})}};
    backward(scale(sum(params[0].tensor), 0.0));
    AdamState state;
    adam_step(params, state, {});
    EXPECT_EQ(std::vector<double>(params[0].tensor.data().begin(), params[0].tensor.data().end()),
              (std::vector<double>{1.0, -2.0, 0.5}));
    EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<NamedParam> params{{"x", Tensor::parameter({1}, {2.0})}};
    backward(sum(params[0].tensor));  // grad = 1
    AdamState state;
    adam_step(params, state, {.lr = 0.1});
    // m_hat = 1, v_hat = 1, so the update is lr / (1 + eps).
    EXPECT_NEAR(params[0].tensor.item(), 2.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, RepeatedStepsMoveMonotonically) {
    std::vector<NamedParam> params{{"x", Tensor::parameter({1}, {0.0})}};
    AdamState state;
    double previous = 0.0;
    for (int i = 0; i < 3; ++i) {
        zero_grads(params);
        backward(scale(sum(params[0].tensor), 2.0));
        adam_step(params, state, {.lr = 0.05});
        EXPECT_LT(params[0].tensor.item(), previous);
        previous = params[0].tensor.item();
    }
}

TEST(Adam, MissingGradNamesParameter) {
    std::vector<NamedParam> params{{"layer0.attn.wq", Tensor::parameter({1}, {0.0})}};
    AdamState state;
    try {
        adam_step(params, state, {});
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("layer0.attn.wq"), std::string::npos);
    }
}

TEST(Rng, DerivedStreamsDifferAndRepeat) {
    EXPECT_EQ(derive_seed(1, "data"), derive_seed(1, "data"));
    EXPECT_NE(derive_seed(1, "data"), derive_seed(1, "init"));
    EXPECT_NE(derive_seed(1, "data"), derive_seed(2, "data"));
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform_int(0, 9), b.uniform_int(0, 9));
}

TEST(Rng, UniformIntCoversRangeEvenly) {
    Rng rng(3);
    std::map<std::int64_t, int> counts;
    for (int i = 0; i < 60000; ++i) ++counts[rng.uniform_int(-2, 3)];
    ASSERT_EQ(counts.size(), 6u);
    EXPECT_GT(testutil::chi_square_pvalue(counts, 60000), 0.01);
}
