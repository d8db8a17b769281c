#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "zsnmt/gradcheck.hpp"
#include "zsnmt/tensor.hpp"

using zsnmt::Tensor;
using zsnmt::Rng;
using D = Tensor<double>;

namespace {

// Independent matmul oracle: plain triple loop, no library code.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
            c[i * n + j] = s;
        }
    return c;
}

D random_tensor(zsnmt::Shape shape, Rng& rng) {
    D t = D::zeros(std::move(shape));
    zsnmt::fill_normal(t, 0.0, 1.0, rng);
    return t;
}

// Fixed weighting tensor turning a non-scalar op output into a scalar loss.
D weighted_sum(const D& out, std::uint64_t seed) {
    Rng rng(seed);
    D w = random_tensor(out.shape(), rng);
    return zsnmt::sum(zsnmt::mul(out, w));
}

}  // namespace

TEST(Tensor, ConstructionAndShape) {
    D t = D::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.dim(0), 2u);
    EXPECT_EQ(t.dim(1), 3u);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_THROW(D::from({2, 2}, {1, 2, 3}), zsnmt::DimensionError);
    EXPECT_THROW(t.item(), zsnmt::DimensionError);
    EXPECT_DOUBLE_EQ(D::scalar(4.5).item(), 4.5);
}

TEST(Tensor, MatmulMatchesTripleLoopOracle) {
    Rng rng(101);
    for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1},
                           {3, 4, 2}, {5, 7, 3}, {2, 9, 8}, {16, 16, 16}}) {
        D a = random_tensor({m, k}, rng);
        D b = random_tensor({k, n}, rng);
        D c = zsnmt::matmul(a, b);
        auto oracle = naive_matmul(a.values(), b.values(), m, k, n);
        ASSERT_EQ(c.values().size(), oracle.size());
        for (std::size_t i = 0; i < oracle.size(); ++i)
            EXPECT_NEAR(c.values()[i], oracle[i], 1e-12) << "at " << i;
    }
}

TEST(Tensor, MatmulIdentityAndZeros) {
    Rng rng(7);
    D a = random_tensor({4, 4}, rng);
    D eye = D::zeros({4, 4});
    zsnmt::fill_identity(eye);
    D r = zsnmt::matmul(a, eye);
    for (std::size_t i = 0; i < a.numel(); ++i)
        EXPECT_EQ(r.values()[i], a.values()[i]);  // exact: rows dot unit vectors
    D z = zsnmt::matmul(a, D::zeros({4, 3}));
    for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, MatmulAssociativity) {
    Rng rng(55);
    D a = random_tensor({6, 5}, rng);
    D b = random_tensor({5, 7}, rng);
    D c = random_tensor({7, 4}, rng);
    D left = zsnmt::matmul(zsnmt::matmul(a, b), c);
    D right = zsnmt::matmul(a, zsnmt::matmul(b, c));
    for (std::size_t i = 0; i < left.numel(); ++i)
        EXPECT_NEAR(left.values()[i], right.values()[i], 1e-10);
}

TEST(Tensor, MatmulShapeErrors) {
    D a = D::zeros({2, 3});
    D b = D::zeros({2, 3});
    EXPECT_THROW(zsnmt::matmul(a, b), zsnmt::DimensionError);
    EXPECT_THROW(zsnmt::add(a, D::zeros({3, 2})), zsnmt::DimensionError);
    EXPECT_THROW(zsnmt::add_row(a, D::zeros({4})), zsnmt::DimensionError);
}

TEST(Tensor, SoftmaxFrozenValues) {
    D x = D::from({1, 3}, {1.0, 2.0, 3.0});
    D p = zsnmt::softmax_rows(x);
    EXPECT_NEAR(p.values()[0], 0.0900, 1e-4);
    EXPECT_NEAR(p.values()[1], 0.2447, 1e-4);
    EXPECT_NEAR(p.values()[2], 0.6652, 1e-4);
    double s = p.values()[0] + p.values()[1] + p.values()[2];
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Tensor, SoftmaxShiftInvarianceAndStability) {
    // Large magnitudes must not overflow thanks to max subtraction.
    D x = D::from({1, 3}, {1000.0, 1001.0, 1002.0});
    D p = zsnmt::softmax_rows(x);
    EXPECT_NEAR(p.values()[0], 0.0900, 1e-4);
    EXPECT_NEAR(p.values()[1], 0.2447, 1e-4);
    EXPECT_NEAR(p.values()[2], 0.6652, 1e-4);
    EXPECT_TRUE(p.all_finite());
}

TEST(Tensor, CausalSoftmaxZerosMaskedEntries) {
    D x = D::from({3, 3}, {5, 9, 9, 1, 1, 9, 1, 1, 1});
    D p = zsnmt::softmax_rows(x, /*causal=*/true);
    // Row 0 sees one column, row 1 two, row 2 all three.
    EXPECT_DOUBLE_EQ(p.values()[0], 1.0);
    EXPECT_DOUBLE_EQ(p.values()[1], 0.0);  // exactly zero, not epsilon
    EXPECT_DOUBLE_EQ(p.values()[2], 0.0);
    EXPECT_NEAR(p.values()[3], 0.5, 1e-12);
    EXPECT_NEAR(p.values()[4], 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(p.values()[5], 0.0);
    EXPECT_NEAR(p.values()[6] + p.values()[7] + p.values()[8], 1.0, 1e-12);
}

TEST(Tensor, LayerNormFrozenValues) {
    D x = D::from({1, 4}, {0.0, 2.0, 4.0, 6.0});
    D g = D::filled({4}, 1.0);
    D b = D::zeros({4});
    D y = zsnmt::layer_norm(x, g, b);
    EXPECT_NEAR(y.values()[0], -1.3416, 1e-3);
    EXPECT_NEAR(y.values()[1], -0.4472, 1e-3);
    EXPECT_NEAR(y.values()[2], 0.4472, 1e-3);
    EXPECT_NEAR(y.values()[3], 1.3416, 1e-3);
}

TEST(Tensor, LayerNormConstantRowStaysFinite) {
    D x = D::filled({2, 5}, 3.25);
    D g = D::filled({5}, 1.0);
    D b = D::zeros({5});
    D y = zsnmt::layer_norm(x, g, b);
    EXPECT_TRUE(y.all_finite());
    for (double v : y.values()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Tensor, LayerNormGainBiasApplied) {
    D x = D::from({1, 2}, {-1.0, 1.0});
    D g = D::from({2}, {2.0, 3.0});
    D b = D::from({2}, {10.0, 20.0});
    D y = zsnmt::layer_norm(x, g, b);
    // x already normalized up to eps: xhat ~ [-1, 1]
    EXPECT_NEAR(y.values()[0], 10.0 - 2.0, 1e-5);
    EXPECT_NEAR(y.values()[1], 20.0 + 3.0, 1e-5);
}

TEST(Tensor, CrossEntropyUniformFrozenValue) {
    // Uniform logits over V=4 classes: loss = ln 4 regardless of gold.
    D logits = D::filled({1, 4}, 0.7);
    D loss = zsnmt::cross_entropy_smoothed(logits, {2}, 0.0, -1);
    EXPECT_NEAR(loss.item(), std::log(4.0), 1e-6);
    EXPECT_NEAR(loss.item(), 1.3863, 1e-4);
}

TEST(Tensor, CrossEntropySmoothedMatchesHandComputation) {
    Rng rng(31);
    const std::size_t v = 6;
    D logits = random_tensor({2, v}, rng);
    const double eps = 0.1;
    std::vector<int> gold = {4, 1};
    D loss = zsnmt::cross_entropy_smoothed(logits, gold, eps, -1);

    // Hand oracle: -sum_c q_c log p_c with q = (1-eps) on gold, eps/(V-1) off.
    double total = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
        const double* row = &logits.values()[r * v];
        double mx = *std::max_element(row, row + v);
        double lse = 0.0;
        for (std::size_t c = 0; c < v; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        for (std::size_t c = 0; c < v; ++c) {
            const double q =
                c == static_cast<std::size_t>(gold[r]) ? 1.0 - eps : eps / double(v - 1);
            total -= q * (row[c] - lse);
        }
    }
    EXPECT_NEAR(loss.item(), total / 2.0, 1e-10);
}

TEST(Tensor, CrossEntropySkipsPadPositions) {
    D logits = D::from({3, 2}, {5.0, 0.0, 0.0, 5.0, 9.0, 9.0});
    std::size_t counted = 0;
    D all = zsnmt::cross_entropy_smoothed_sum(logits, {0, 1, 1}, 0.0, -1, &counted);
    EXPECT_EQ(counted, 3u);
    // Mark the middle position as padding (pad id 1 here).
    D skip = zsnmt::cross_entropy_smoothed_sum(logits, {0, 1, 1}, 0.0, 1, &counted);
    EXPECT_EQ(counted, 1u);
    EXPECT_LT(skip.item(), all.item());
    EXPECT_THROW(zsnmt::cross_entropy_smoothed(logits, {0, 0}, 0.0, -1), zsnmt::DimensionError);
    EXPECT_THROW(zsnmt::cross_entropy_smoothed(logits, {0, 7, 0}, 0.0, -1), zsnmt::IndexError);
    EXPECT_THROW(zsnmt::cross_entropy_smoothed(logits, {0, 1, 1}, 1.0, -1), zsnmt::ConfigError);
}

TEST(Tensor, EmbeddingGatherAndScatter) {
    D table = D::from({3, 2}, {0, 1, 10, 11, 20, 21});
    table.set_requires_grad(true);
    D e = zsnmt::embedding_rows(table, {2, 0, 2});
    EXPECT_EQ(e.shape(), (zsnmt::Shape{3, 2}));
    EXPECT_DOUBLE_EQ(e.values()[0], 20);
    EXPECT_DOUBLE_EQ(e.values()[2], 0);
    EXPECT_DOUBLE_EQ(e.values()[5], 21);
    D loss = zsnmt::sum(e);
    loss.backward();
    // Row 2 fetched twice, row 0 once, row 1 never.
    EXPECT_DOUBLE_EQ(table.grad()[0], 1.0);
    EXPECT_DOUBLE_EQ(table.grad()[2], 0.0);
    EXPECT_DOUBLE_EQ(table.grad()[4], 2.0);
    EXPECT_THROW(zsnmt::embedding_rows(table, {3}), zsnmt::IndexError);
    EXPECT_THROW(zsnmt::embedding_rows(table, {-1}), zsnmt::IndexError);
}

TEST(Tensor, SliceAndConcatRoundTrip) {
    Rng rng(42);
    D a = random_tensor({3, 6}, rng);
    D left = zsnmt::cols(a, 0, 2);
    D mid = zsnmt::cols(a, 2, 5);
    D right = zsnmt::cols(a, 5, 6);
    D back = zsnmt::concat_cols<double>({left, mid, right});
    ASSERT_EQ(back.shape(), a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i)
        EXPECT_EQ(back.values()[i], a.values()[i]);
    D r = zsnmt::rows(a, 1, 3);
    EXPECT_EQ(r.dim(0), 2u);
    EXPECT_EQ(r.values()[0], a.values()[6]);
    EXPECT_THROW(zsnmt::cols(a, 4, 3), zsnmt::DimensionError);
    EXPECT_THROW(zsnmt::rows(a, 0, 9), zsnmt::DimensionError);
}

TEST(Tensor, SharedSubexpressionAccumulates) {
    D x = D::from({2}, {3.0, -2.0}, /*requires_grad=*/true);
    D y = zsnmt::sum(zsnmt::mul(x, x));  // d/dx sum(x^2) = 2x
    y.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
    EXPECT_THROW(zsnmt::mul(x, x).backward(), zsnmt::DimensionError);  // non-scalar
}

TEST(Tensor, NoGradGuardSuppressesGraph) {
    D x = D::from({2}, {1.0, 2.0}, true);
    {
        zsnmt::NoGradGuard ng;
        D y = zsnmt::sum(zsnmt::scale(x, 2.0));
        EXPECT_FALSE(y.requires_grad());
        y.backward();  // legal no-op sweep: no parents recorded
    }
    EXPECT_TRUE(zsnmt::grad_enabled());
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Tensor, DropoutZeroRateIsIdentityAndMaskReplays) {
    Rng rng(99);
    D x = random_tensor({4, 4}, rng);
    x.set_requires_grad(true);
    Rng drop_rng(5);
    D y0 = zsnmt::dropout(x, 0.0, drop_rng);
    EXPECT_EQ(y0.node().get(), x.node().get());  // exact pass-through

    D y = zsnmt::dropout(x, 0.5, drop_rng);
    // Surviving entries are scaled by 1/(1-rate); zeroed entries match in backward.
    zsnmt::sum(y).backward();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (y.values()[i] == 0.0)
            EXPECT_DOUBLE_EQ(x.grad()[i], 0.0);
        else
            EXPECT_NEAR(y.values()[i], x.values()[i] * 2.0, 1e-12);
    }
    EXPECT_THROW(zsnmt::dropout(x, 1.0, drop_rng), zsnmt::ConfigError);
}

TEST(Tensor, PositionalRowsInterleavesSinCos) {
    D pe = zsnmt::positional_rows<double>(3, 4);
    EXPECT_DOUBLE_EQ(pe.values()[0], 0.0);  // sin(0)
    EXPECT_DOUBLE_EQ(pe.values()[1], 1.0);  // cos(0)
    EXPECT_NEAR(pe.values()[4], std::sin(1.0), 1e-12);
    EXPECT_NEAR(pe.values()[6], std::sin(1.0 / 100.0), 1e-12);
}

// ---- finite-difference verification of every backward rule ----

TEST(GradCheck, CoversAllOperationsWithinBudget) {
    const auto t0 = std::chrono::steady_clock::now();
    using Inputs = std::vector<D>;
    struct Case {
        const char* name;
        std::vector<zsnmt::Shape> shapes;
        std::function<D(const Inputs&)> fn;
    };

    std::vector<Case> cases;
    cases.push_back({"matmul_3x4_4x2", {{3, 4}, {4, 2}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::matmul(in[0], in[1]), 1);
                     }});
    cases.push_back({"matmul_1x5_5x1", {{1, 5}, {5, 1}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::matmul(in[0], in[1]), 2);
                     }});
    cases.push_back({"matmul_chain", {{2, 3}, {3, 3}, {3, 2}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::matmul(zsnmt::matmul(in[0], in[1]), in[2]), 3);
                     }});
    cases.push_back({"add", {{3, 3}, {3, 3}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::add(in[0], in[1]), 4);
                     }});
    cases.push_back({"add_all_3way", {{2, 3}, {2, 3}, {2, 3}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::add_all<double>({in[0], in[1], in[2]}), 5);
                     }});
    cases.push_back({"mul", {{2, 4}, {2, 4}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::mul(in[0], in[1]), 6);
                     }});
    cases.push_back({"mul_shared_operand", {{5}}, [](const Inputs& in) {
                         return zsnmt::sum(zsnmt::mul(in[0], in[0]));
                     }});
    cases.push_back({"scale", {{3, 2}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::scale(in[0], -1.7), 7);
                     }});
    cases.push_back({"add_row", {{3, 4}, {4}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::add_row(in[0], in[1]), 8);
                     }});
    cases.push_back({"relu", {{3, 5}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::relu(in[0]), 9);
                     }});
    cases.push_back({"transpose", {{4, 3}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::transpose(in[0]), 10);
                     }});
    cases.push_back({"softmax", {{3, 4}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::softmax_rows(in[0]), 11);
                     }});
    cases.push_back({"softmax_causal", {{4, 4}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::softmax_rows(in[0], true), 12);
                     }});
    cases.push_back({"layer_norm", {{3, 4}, {4}, {4}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::layer_norm(in[0], in[1], in[2]), 13);
                     }});
    cases.push_back({"layer_norm_single_row", {{1, 6}, {6}, {6}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::layer_norm(in[0], in[1], in[2]), 14);
                     }});
    cases.push_back({"embedding_repeated_ids", {{7, 3}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::embedding_rows(in[0], {2, 0, 5, 2}), 15);
                     }});
    cases.push_back({"cols_slice", {{3, 6}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::cols(in[0], 1, 4), 16);
                     }});
    cases.push_back({"rows_slice", {{5, 3}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::rows(in[0], 1, 4), 17);
                     }});
    cases.push_back({"concat_cols", {{3, 2}, {3, 4}}, [](const Inputs& in) {
                         return weighted_sum(zsnmt::concat_cols<double>({in[0], in[1]}), 18);
                     }});
    cases.push_back({"sum", {{4, 2}}, [](const Inputs& in) { return zsnmt::sum(in[0]); }});
    cases.push_back({"cross_entropy_smoothed", {{3, 6}}, [](const Inputs& in) {
                         return zsnmt::cross_entropy_smoothed(in[0], {4, 1, 0}, 0.1, -1);
                     }});
    cases.push_back({"cross_entropy_with_pad", {{4, 5}}, [](const Inputs& in) {
                         return zsnmt::cross_entropy_smoothed(in[0], {2, 0, 0, 3}, 0.05, 0);
                     }});
    cases.push_back({"dropout_fixed_mask", {{4, 4}}, [](const Inputs& in) {
                         Rng rng(77);  // same mask on every probe evaluation
                         return weighted_sum(zsnmt::dropout(in[0], 0.25, rng), 19);
                     }});
    cases.push_back({"attention_block", {{3, 4}, {3, 4}, {3, 4}}, [](const Inputs& in) {
                         D scores = zsnmt::scale(zsnmt::matmul(in[0], zsnmt::transpose(in[1])),
                                                 1.0 / 2.0);
                         return weighted_sum(zsnmt::matmul(zsnmt::softmax_rows(scores), in[2]), 20);
                     }});
    cases.push_back({"norm_ffn_block", {{2, 4}, {4, 4}, {4}, {4}, {4}}, [](const Inputs& in) {
                         D h = zsnmt::add_row(zsnmt::matmul(in[0], in[1]), in[2]);
                         D y = zsnmt::layer_norm(zsnmt::relu(h), in[3], in[4]);
                         return weighted_sum(y, 21);
                     }});

    ASSERT_GE(cases.size(), 20u);
    Rng rng(2024);
    for (const auto& c : cases) {
        std::vector<D> inputs;
        for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng));
        if (std::string(c.name) == "relu") {
            // Keep values away from the kink where the derivative jumps.
            for (auto& v : inputs[0].values())
                if (std::abs(v) < 0.1) v += v >= 0 ? 0.2 : -0.2;
        }
        auto rep = zsnmt::check_gradients(c.fn, inputs, 1e-5, 1e-4);
        EXPECT_TRUE(rep.ok) << c.name << ": " << rep.describe();
    }
    const auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    EXPECT_LT(elapsed, 60) << "gradient checks exceeded the one-minute budget";
}

TEST(GradCheck, CatchesCorruptedBackwardRule) {
    // Negative control: a relu clone whose backward leaks gradient through
    // negative inputs. The checker must flag it.
    auto broken_relu = [](const std::vector<D>& in) {
        const D& a = in[0];
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = a.values()[i] > 0 ? a.values()[i] : 0.0;
        D r = zsnmt::detail::make_op<double>(
            a.shape(), std::move(out), {a}, [](D::Node& n) {
                auto& p = *n.parents[0];
                p.ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    p.grad[i] += n.grad[i];  // wrong: ignores the mask
            });
        return weighted_sum(r, 30);
    };
    Rng rng(404);
    D x = random_tensor({3, 3}, rng);
    bool has_negative = false;
    for (double v : x.values()) has_negative = has_negative || v < -0.1;
    ASSERT_TRUE(has_negative);
    auto rep = zsnmt::check_gradients(broken_relu, {x}, 1e-5, 1e-4);
    EXPECT_FALSE(rep.ok) << "corrupted backward slipped past the checker";
    EXPECT_GT(rep.worst_rel, 1e-2);
}

TEST(GradCheck, ReportsWorstElementLocation) {
    D x = D::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto fn = [](const std::vector<D>& in) { return zsnmt::sum(zsnmt::mul(in[0], in[0])); };
    auto rep = zsnmt::check_gradients(fn, {x});
    EXPECT_TRUE(rep.ok);
    EXPECT_EQ(rep.checked, 4u);
    EXPECT_NE(rep.describe().find("ok"), std::string::npos);
}
