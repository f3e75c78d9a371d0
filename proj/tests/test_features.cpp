#include <gtest/gtest.h>

#include "lrcn/features.hpp"
#include "lrcn/random.hpp"

using namespace lrcn;

namespace {

FeatureExtractor random_extractor(const FeatureExtractorSpec& spec, Rng& rng) {
    FeatureExtractor e = FeatureExtractor::zeros(spec);
    e.for_each_block([&](std::string_view, Tensor& t) {
        for (double& v : t.values()) v = rng.uniform(-0.7, 0.7);
    });
    return e;
}

/// Max relative error (above a 1e-9 absolute floor) between phi_backward and finite differences of w . phi(x).
double phi_grad_error(const FeatureExtractorSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    FeatureExtractor e = random_extractor(spec, rng);
    const Tensor x = rng.uniform_tensor(spec.input_shape, -1, 1);
    const Tensor w = rng.uniform_tensor({spec.out_dim()}, -1, 1);
    auto score = [&](const FeatureExtractor& ex, const Tensor& in) {
        const Tensor y = phi_forward(ex, in).out;
        double s = 0;
        for (std::size_t k = 0; k < y.size(); ++k) s += w[k] * y[k];
        return s;
    };
    FeatureExtractor grads = FeatureExtractor::zeros(spec);
    const Tensor dx = phi_backward(e, phi_forward(e, x).cache, w, grads);
    double worst = 0.0;
    auto compare = [&](const Tensor& analytic, const Tensor& numeric) {
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double err = std::abs(analytic[i] - numeric[i]);
            if (err > 1e-9) worst = std::max(worst, err / std::max(std::abs(analytic[i]), std::abs(numeric[i])));
        }
    };
    compare(dx, finite_diff_grad([&](const Tensor& v) { return score(e, v.reshaped(spec.input_shape)); },
                                 x.flattened(), 1e-5));
    std::vector<Tensor*> blocks;
    e.for_each_block([&](std::string_view, Tensor& t) { blocks.push_back(&t); });
    std::vector<const Tensor*> gblocks;
    grads.for_each_block([&](std::string_view, const Tensor& t) { gblocks.push_back(&t); });
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const Tensor orig = *blocks[b];
        compare(*gblocks[b], finite_diff_grad(
                                 [&](const Tensor& v) {
                                     *blocks[b] = v;
                                     const double s = score(e, x);
                                     *blocks[b] = orig;
                                     return s;
                                 },
                                 orig, 1e-5));
    }
    return worst;
}

}  // namespace

TEST(PhiForward, IdentityFlattens) {
    const FeatureExtractor e = FeatureExtractor::zeros({ExtractorKind::identity, {2, 3}});
    const Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(phi_forward(e, x).out, Tensor::vector({1, 2, 3, 4, 5, 6}));
}

TEST(PhiForward, ZeroLinearGivesZero) {
    const FeatureExtractor e = FeatureExtractor::zeros({ExtractorKind::linear, {3}, 4});
    EXPECT_EQ(phi_forward(e, Tensor::vector({1, 2, 3})).out, Tensor::zeros({4}));
}

TEST(PhiForward, ShapeMismatchThrows) {
    const FeatureExtractor e = FeatureExtractor::zeros({ExtractorKind::linear, {3}, 4});
    EXPECT_THROW(phi_forward(e, Tensor({4})), DimensionError);
}

TEST(PhiForward, SmallConvHandComputed) {
    // 1x4x4 input, one 2x2 kernel [[1,0],[0,-1]], bias 0.5: conv(i,j) = x(i,j) - x(i+1,j+1) + 0.5.
    FeatureExtractor e = FeatureExtractor::zeros({ExtractorKind::smallconv, {1, 4, 4}, 1, 16, 1, 2});
    e.K = Tensor({1, 1, 2, 2}, std::vector<double>{1, 0, 0, -1});
    e.kb[0] = 0.5;
    e.W[0] = 2.0;
    e.b[0] = -1.0;
    const Tensor x({1, 4, 4}, std::vector<double>{1, 2, 3, 4,  //
                                                  5, 6, 7, 8,  //
                                                  9, 1, 2, 3,  //
                                                  4, 5, 6, 7});
    const FeatureOutput r = phi_forward(e, x);
    const std::vector<double> want{1 - 6 + 0.5, 2 - 7 + 0.5, 3 - 8 + 0.5,  //
                                   5 - 1 + 0.5, 6 - 2 + 0.5, 7 - 3 + 0.5,  //
                                   9 - 5 + 0.5, 1 - 6 + 0.5, 2 - 7 + 0.5};
    ASSERT_EQ(r.cache.conv.size(), 9u);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(r.cache.conv[i], want[i]);
    // 3x3 map pools to one cell over its top-left 2x2 window: max(-4.5, -4.5, 4.5, 4.5) = 4.5.
    EXPECT_EQ(r.cache.pooled[0], 4.5);
    EXPECT_EQ(r.out[0], 2.0 * 4.5 - 1.0);
}

TEST(PhiForward, TimeInvariant) {
    Rng rng(1);
    const FeatureExtractor e = random_extractor({ExtractorKind::smallconv, {2, 5, 5}, 3, 16, 2, 3}, rng);
    std::vector<Tensor> frames;
    for (int t = 0; t < 5; ++t) frames.push_back(rng.uniform_tensor({2, 5, 5}, -1, 1));
    std::vector<Tensor> forward, backward(frames.size());
    for (const auto& f : frames) forward.push_back(phi_forward(e, f).out);
    for (std::size_t t = frames.size(); t-- > 0;) backward[t] = phi_forward(e, frames[t]).out;
    EXPECT_EQ(forward, backward);
}

TEST(PhiBackward, IdentityPassesGradientThrough) {
    const FeatureExtractor e = FeatureExtractor::zeros({ExtractorKind::identity, {3}});
    FeatureExtractor g = e;
    const Tensor grad = Tensor::vector({0.1, -0.2, 0.3});
    EXPECT_EQ(phi_backward(e, phi_forward(e, Tensor::vector({1, 2, 3})).cache, grad, g), grad);
    std::size_t blocks = 0;
    g.for_each_block([&](std::string_view, const Tensor&) { ++blocks; });
    EXPECT_EQ(blocks, 0u);
}

TEST(PhiBackward, LinearMatchesFiniteDifferences) {
    EXPECT_LE(phi_grad_error({ExtractorKind::linear, {4}, 3}, 2), 1e-5);
}

TEST(PhiBackward, Mlp1MatchesFiniteDifferences) {
    EXPECT_LE(phi_grad_error({ExtractorKind::mlp1, {4}, 3, 5}, 3), 1e-5);
}

TEST(PhiBackward, SmallConvMatchesFiniteDifferences) {
    for (std::uint64_t seed = 4; seed < 8; ++seed)
        EXPECT_LE(phi_grad_error({ExtractorKind::smallconv, {2, 6, 5}, 3, 16, 2, 3}, seed), 1e-4);
}

TEST(ExtractorSpec, Validation) {
    EXPECT_THROW(FeatureExtractorSpec({ExtractorKind::linear, {3}, 0}).validate(), DimensionError);
    EXPECT_THROW(FeatureExtractorSpec({ExtractorKind::smallconv, {1, 3, 3}, 2}).validate(), DimensionError);
    EXPECT_THROW(FeatureExtractorSpec({ExtractorKind::smallconv, {9}, 2}).validate(), DimensionError);
    EXPECT_NO_THROW(FeatureExtractorSpec({ExtractorKind::smallconv, {1, 4, 4}, 2}).validate());
    EXPECT_EQ(extractor_kind_from(to_string(ExtractorKind::mlp1)), ExtractorKind::mlp1);
}
