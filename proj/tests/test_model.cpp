#include <gtest/gtest.h>

#include <cmath>

#include "lrcn/data.hpp"
#include "lrcn/model.hpp"
#include "lrcn/training.hpp"

using namespace lrcn;

namespace {

Vocabulary small_vocab(std::size_t words) {
    Vocabulary v;
    v.tokens = {"<BOS>", "<EOS>"};
    for (std::size_t i = 0; i < words; ++i) v.tokens.push_back("w" + std::to_string(i));
    v.rebuild_index();
    return v;
}

void randomize(Model& m, Rng& rng, double s = 0.8) {
    m.params.for_each_block([&](const std::string&, Tensor& t) {
        for (double& v : t.values()) v = rng.uniform(-s, s);
    });
}

Model random_caption_model(CaptionVariant v, std::uint64_t seed, std::size_t img = 3) {
    Rng rng(seed);
    Model m = Model::zeros(caption_spec(v, small_vocab(3), {ExtractorKind::identity, {img}}, 4, 3));
    randomize(m, rng);
    return m;
}

Model classify_model(std::uint64_t seed, bool stateless = false) {
    ModelSpec s;
    s.task = Task::classify;
    s.hidden = 5;
    s.num_classes = 3;
    s.stateless = stateless;
    s.extractor = {ExtractorKind::linear, {4}, 3};
    Rng rng(seed);
    return Model::initialized(s, rng);
}

void expect_distribution(const Tensor& p) {
    double s = 0.0;
    for (double v : p.values()) {
        EXPECT_GE(v, 0.0);
        s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary and spec

TEST(Vocabulary, SpecialsFirstAndUnkFallback) {
    const Vocabulary v = Vocabulary::from_words({"cat", "dog", "cat"});
    EXPECT_EQ(v.size(), 5u);
    EXPECT_EQ(v.bos, 0u);
    EXPECT_EQ(v.eos, 1u);
    EXPECT_EQ(v.id("dog"), 4u);
    EXPECT_EQ(v.id("zebra"), 2u);
    EXPECT_EQ(v.word(3), "cat");
    EXPECT_THROW(v.word(9), DomainError);
    EXPECT_THROW(small_vocab(1).id("zebra"), DomainError);
    Vocabulary bad = v;
    bad.eos = bad.bos;
    EXPECT_THROW(bad.validate(), DomainError);
}

TEST(ModelSpec, Validation) {
    ModelSpec s = caption_spec(CaptionVariant::lrcn_2f, small_vocab(2), {ExtractorKind::identity, {3}}, 4, 3);
    EXPECT_NO_THROW(s.validate());
    s.layers = 1;
    EXPECT_THROW(s.validate(), DimensionError);
    s = caption_spec(CaptionVariant::lrcn_2u, small_vocab(2), {ExtractorKind::identity, {3}}, 4, 3);
    s.layers = 3;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s.task = Task::encode_decode;
    EXPECT_NO_THROW(s.validate());
    s.factored = true;
    s.injection_layer = 3;
    EXPECT_NO_THROW(s.validate());
    s.task = Task::perstep_decode;
    s.factored = false;
    s.injection_layer = 1;
    s.crf_blocks = {3};
    s.extractor = {ExtractorKind::linear, {3}, 2};
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Model, StatelessInitZeroesRecurrentWeights) {
    const Model m = classify_model(1, true);
    for_each_block(m.params.layers[0], [](std::string_view n, const Tensor& t) {
        if (n[0] == 'W' && n[2] == 'h') {
            EXPECT_EQ(t, zeros_like(t)) << n;
        }
    });
}

// ---------------------------------------------------------------------------
// Embedding

TEST(Embed, IdentityGivesBasisVector) {
    const EmbeddingParams e{Tensor::identity(4)};
    EXPECT_EQ(embed(e, 2), Tensor::vector({0, 0, 1, 0}));
    EXPECT_THROW(embed(e, 4), DomainError);
}

TEST(Embed, MatchesOneHotProduct) {
    Rng rng(1);
    const EmbeddingParams e{rng.uniform_tensor({3, 5}, -1, 1)};
    for (std::size_t k = 0; k < 5; ++k) {
        const Tensor via = matmul(e.W_e, one_hot(k, 5).reshaped({5, 1})).flattened();
        EXPECT_LE(max_abs_diff(embed(e, k), via), 1e-15);
    }
}

TEST(Embed, ReadsStoredColumn) {
    const EmbeddingParams e{Tensor::matrix({{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}})};
    EXPECT_EQ(embed(e, 2), Tensor::vector({3, 7, 11}));
}

// ---------------------------------------------------------------------------
// Classification

TEST(Classify, SingleFrameEqualsStepSoftmax) {
    const Model m = classify_model(2);
    const Tensor x = Tensor::vector({0.1, -0.3, 0.7, 0.2});
    const Tensor feat = extract(m, x).out;
    const Tensor want = softmax(model_step(m, RecurrentState::zeros(m.params.layers), std::nullopt, &feat).logits);
    EXPECT_EQ(classify_sequence(m, {x}), want);
}

TEST(Classify, StatelessIdenticalFramesEqualSingleStep) {
    const Model m = classify_model(3, true);
    const Tensor x = Tensor::vector({0.5, 0.5, -1.0, 2.0});
    const Tensor one = classify_sequence(m, {x});
    EXPECT_LE(max_abs_diff(classify_sequence(m, {x, x, x, x}), one), 1e-15);
}

TEST(Classify, AverageMatchesHandAverage) {
    const Model m = classify_model(4);
    Rng rng(5);
    std::vector<Tensor> frames;
    for (int t = 0; t < 3; ++t) frames.push_back(rng.uniform_tensor({4}, -1, 1));
    RecurrentState state = RecurrentState::zeros(m.params.layers);
    Tensor avg({3});
    for (const auto& f : frames) {
        const Tensor feat = extract(m, f).out;
        ModelStep s = model_step(m, state, std::nullopt, &feat);
        state = s.stack.state;
        const Tensor p = softmax(s.logits);
        for (std::size_t k = 0; k < 3; ++k) avg[k] += p[k] / 3.0;
    }
    const Tensor got = classify_sequence(m, frames);
    EXPECT_LE(max_abs_diff(got, avg), 1e-14);
    expect_distribution(got);
    EXPECT_THROW(classify_sequence(m, {}), DomainError);
}

TEST(Classify, StatelessIsOrderInvariant) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Model m = classify_model(seed, true);
        Rng rng(seed + 100);
        std::vector<Tensor> frames;
        for (int t = 0; t < 6; ++t) frames.push_back(rng.uniform_tensor({4}, -1, 1));
        std::vector<Tensor> shuffled = frames;
        rng.shuffle(shuffled.begin(), shuffled.end());
        EXPECT_LE(max_abs_diff(classify_sequence(m, frames), classify_sequence(m, shuffled)), 1e-15);
    }
}

TEST(Classify, ZeroRecurrentRnnIsOrderInvariant) {
    ModelSpec s;
    s.task = Task::classify;
    s.cell = CellType::rnn;
    s.hidden = 4;
    s.num_classes = 2;
    s.extractor = {ExtractorKind::identity, {3}};
    Rng rng(6);
    Model m = Model::initialized(s, rng);
    std::get<RnnCellParams>(m.params.layers[0]).W_hh.fill(0.0);
    const std::vector<Tensor> a{Tensor::vector({1, 0, 0}), Tensor::vector({0, 1, 0}), Tensor::vector({0, 0, 1})};
    const std::vector<Tensor> b{a[2], a[0], a[1]};
    EXPECT_LE(max_abs_diff(classify_sequence(m, a), classify_sequence(m, b)), 1e-15);
}

TEST(Classify, TrainedRecurrentModelIsOrderSensitive) {
    const auto train = gen_order_task(1, 600);
    ModelSpec s;
    s.task = Task::classify;
    s.hidden = 8;
    s.num_classes = 2;
    s.extractor = {ExtractorKind::identity, {4}};
    Rng rng(1);
    Model m = Model::initialized(s, rng);
    TrainConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.grad_clip = 5.0;
    for (int e = 0; e < 10; ++e) train_epoch(m, train, cfg, rng);
    bool flipped = false;
    for (const auto& ex : gen_order_task(2, 50)) {
        std::vector<Tensor> swapped = ex.inputs;
        std::size_t a = 0, b = 0;
        for (std::size_t t = 0; t < swapped.size(); ++t) {
            if (swapped[t][0] == 1.0) a = t;
            if (swapped[t][1] == 1.0) b = t;
        }
        std::swap(swapped[a], swapped[b]);
        if (argmax(classify_sequence(m, ex.inputs)) != argmax(classify_sequence(m, swapped))) {
            flipped = true;
            break;
        }
    }
    EXPECT_TRUE(flipped);
}

// ---------------------------------------------------------------------------
// Captioning

TEST(Caption, FactoredLowerLayerIgnoresImage) {
    const Model m = random_caption_model(CaptionVariant::lrcn_2f, 7);
    const Tensor img1 = Tensor::vector({1, -1, 0.5}), img2 = Tensor::vector({-3, 0.2, 9});
    RecurrentState s1 = RecurrentState::zeros(m.params.layers), s2 = s1;
    std::size_t prev = m.spec.vocab.bos;
    for (std::size_t tok : {2u, 3u, 4u, 1u}) {
        const auto r1 = caption_step(m, img1, prev, s1), r2 = caption_step(m, img2, prev, s2);
        EXPECT_EQ(r1.state.layers[0].h, r2.state.layers[0].h);
        EXPECT_EQ(r1.state.layers[0].c, r2.state.layers[0].c);
        EXPECT_NE(r1.state.layers[1].h, r2.state.layers[1].h);
        s1 = r1.state;
        s2 = r2.state;
        prev = tok;
    }
}

TEST(Caption, ZeroModelIsUniform) {
    const Model m = Model::zeros(caption_spec(CaptionVariant::lrcn_1u, small_vocab(3), {ExtractorKind::identity, {3}}, 4, 3));
    const auto r = caption_step(m, Tensor::vector({1, 2, 3}), 2, RecurrentState::zeros(m.params.layers));
    for (double p : r.dist.values()) EXPECT_NEAR(p, 1.0 / 5.0, 1e-15);
    EXPECT_THROW(caption_step(m, Tensor::vector({1, 2, 3}), 5, RecurrentState::zeros(m.params.layers)), DomainError);
}

TEST(Caption, TwoLayerUnfactoredMatchesManualComposition) {
    const Model m = random_caption_model(CaptionVariant::lrcn_2u, 8);
    const Tensor img = Tensor::vector({0.3, -0.6, 0.9});
    const auto& l1 = std::get<LstmCellParams>(m.params.layers[0]);
    const auto& l2 = std::get<LstmCellParams>(m.params.layers[1]);
    RecurrentState state = RecurrentState::zeros(m.params.layers);
    Tensor h1({4}), c1({4}), h2({4}), c2({4});
    std::size_t prev = 0;
    for (std::size_t tok : {3u, 2u, 1u}) {
        const Tensor x1 = concat(embed(m.params.embedding, prev), img);
        const LstmStep a = lstm_step(l1, x1, h1, c1);
        const LstmStep b = lstm_step(l2, a.h, h2, c2);
        const Tensor want = softmax(predict_logits(m.params.prediction, b.h));
        const auto r = caption_step(m, img, prev, state);
        EXPECT_EQ(r.dist, want);
        h1 = a.h, c1 = a.c, h2 = b.h, c2 = b.c;
        state = r.state;
        prev = tok;
    }
}

TEST(Caption, ZeroModelLikelihoodIsUniform) {
    const Model m = Model::zeros(caption_spec(CaptionVariant::lrcn_2u, small_vocab(4), {ExtractorKind::identity, {2}}, 3, 2));
    EXPECT_NEAR(caption_log_likelihood(m, Tensor::vector({1, 1}), {2, 3, 4, 1}), 4.0 * std::log(1.0 / 6.0), 1e-12);
    EXPECT_THROW(caption_log_likelihood(m, Tensor::vector({1, 1}), {2, 3}), DomainError);
    EXPECT_THROW(caption_log_likelihood(m, Tensor::vector({1, 1}), {9, 1}), DomainError);
}

TEST(Caption, LongerCaptionHasLowerLikelihood) {
    const Model m = random_caption_model(CaptionVariant::lrcn_1u, 9);
    const Tensor img = Tensor::vector({0.1, 0.2, 0.3});
    EXPECT_LT(caption_log_likelihood(m, img, {2, 3, 3, 1}), caption_log_likelihood(m, img, {2, 3, 1}));
    EXPECT_LT(caption_log_likelihood(m, img, {2, 3, 1}), 0.0);
}

TEST(Caption, LikelihoodMatchesStepwiseAccumulation) {
    const Model m = random_caption_model(CaptionVariant::lrcn_1u, 10);
    ASSERT_EQ(m.spec.vocab.size(), 5u);
    Model k4 = Model::zeros(caption_spec(CaptionVariant::lrcn_1u, small_vocab(2), {ExtractorKind::identity, {3}}, 4, 3));
    Rng rng(10);
    randomize(k4, rng);
    const Tensor img = Tensor::vector({0.4, -0.4, 0.1});
    const std::vector<std::size_t> cap{3, 2, 1};
    double want = 0.0;
    RecurrentState state = RecurrentState::zeros(k4.params.layers);
    std::size_t prev = k4.spec.vocab.bos;
    for (std::size_t y : cap) {
        const auto r = caption_step(k4, img, prev, state);
        want += std::log(r.dist[y]);
        state = r.state;
        prev = y;
    }
    EXPECT_NEAR(caption_log_likelihood(k4, img, cap), want, 1e-12);
}

TEST(Caption, ImageIsDuplicatedAtEveryStep) {
    const Model m = random_caption_model(CaptionVariant::lrcn_1u, 11);
    const Example ex{{Tensor::vector({1, 2, 3})}, {2, 3, 4, 1}};
    const auto plan = plan_steps(m.spec, ex);
    ASSERT_EQ(plan.size(), 4u);
    for (const auto& p : plan) EXPECT_EQ(p.visual, std::optional<std::size_t>(0));
    const Unrolled u = unroll(m, ex);
    EXPECT_EQ(u.visuals.size(), 1u);
    for (const auto& p : u.probs) expect_distribution(p);
}

// ---------------------------------------------------------------------------
// Encoder-decoder

TEST(EncodeDecode, PlanSpansTPlusTPrimeMinusOneSteps) {
    ModelSpec s;
    s.task = Task::encode_decode;
    s.vocab = small_vocab(3);
    s.extractor = {ExtractorKind::identity, {2}};
    const Example ex{{Tensor({2}), Tensor({2}), Tensor({2})}, {2, 3, 1}};
    const auto plan = plan_steps(s, ex);
    ASSERT_EQ(plan.size(), 3u + 3u - 1u);
    EXPECT_FALSE(plan[0].token);
    EXPECT_FALSE(plan[1].target);
    EXPECT_EQ(plan[2].token, std::optional<std::size_t>(s.vocab.bos));
    EXPECT_EQ(plan[2].visual, std::optional<std::size_t>(2));
    EXPECT_EQ(plan[2].target, std::optional<std::size_t>(2));
    EXPECT_EQ(plan[4].token, std::optional<std::size_t>(3));
    EXPECT_FALSE(plan[4].visual);
}

TEST(EncodeDecode, ZeroModelIsUniform) {
    ModelSpec s;
    s.task = Task::encode_decode;
    s.vocab = small_vocab(2);
    s.extractor = {ExtractorKind::linear, {2}, 3};
    const Model m = Model::zeros(s);
    const auto dists = encode_decode(m, {Tensor::vector({5, 6}), Tensor::vector({-1, 2})}, 3);
    ASSERT_EQ(dists.size(), 3u);  // uniform argmax is <BOS>, never <EOS>
    for (const auto& d : dists)
        for (double p : d.values()) EXPECT_NEAR(p, 0.25, 1e-15);
    EXPECT_THROW(encode_decode(m, {}, 3), DomainError);
}

TEST(EncodeDecode, SingleInputFirstPredictionUsesIt) {
    ModelSpec s;
    s.task = Task::encode_decode;
    s.vocab = small_vocab(2);
    s.hidden = 4;
    s.embed_dim = 3;
    s.extractor = {ExtractorKind::identity, {2}};
    Rng rng(12);
    Model m = Model::zeros(s);
    randomize(m, rng);
    const Tensor x = Tensor::vector({0.5, -0.5});
    const auto d = encode_decode(m, {x}, 1);
    const ModelStep step = model_step(m, RecurrentState::zeros(m.params.layers), s.vocab.bos, &x);
    EXPECT_EQ(d.at(0), softmax(step.logits));
}

// ---------------------------------------------------------------------------
// Per-step decoder

namespace {

Model perstep_model(CrfEncoding enc, bool zero, std::uint64_t seed = 13) {
    ModelSpec s;
    s.task = Task::perstep_decode;
    s.vocab = small_vocab(3);
    s.hidden = 4;
    s.embed_dim = 3;
    s.crf = enc;
    s.crf_blocks = {2, 3};
    s.extractor = {ExtractorKind::identity, {5}};
    Model m = Model::zeros(s);
    if (!zero) {
        Rng rng(seed);
        randomize(m, rng);
    }
    return m;
}

}  // namespace

TEST(Perstep, CrfMaxEqualsCaptionStep) {
    const Model m = perstep_model(CrfEncoding::max, false);
    const Tensor v = Tensor::vector({0, 1, 0, 0, 1});
    const RecurrentState z = RecurrentState::zeros(m.params.layers);
    EXPECT_EQ(perstep_decode_step(m, v, 0, z).dist, caption_step(m, v, 0, z).dist);
    EXPECT_THROW(perstep_decode_step(m, Tensor::vector({0.5, 0.5, 0, 0, 1}), 0, z), DomainError);
}

TEST(Perstep, UniformBlocksOnZeroModelGiveUniformOutput) {
    const Model m = perstep_model(CrfEncoding::prob, true);
    const Tensor v = Tensor::vector({0.5, 0.5, 1.0 / 3, 1.0 / 3, 1.0 / 3});
    const auto r = perstep_decode_step(m, v, 0, RecurrentState::zeros(m.params.layers));
    for (double p : r.dist.values()) EXPECT_NEAR(p, 0.2, 1e-15);
}

TEST(Perstep, DegenerateProbEqualsMax) {
    const Model pm = perstep_model(CrfEncoding::prob, false), mm = perstep_model(CrfEncoding::max, false);
    const Tensor v = Tensor::vector({1, 0, 0, 0, 1});
    RecurrentState a = RecurrentState::zeros(pm.params.layers), b = a;
    for (std::size_t tok : {0u, 2u, 3u}) {
        const auto ra = perstep_decode_step(pm, v, tok, a), rb = perstep_decode_step(mm, v, tok, b);
        EXPECT_LE(max_abs_diff(ra.dist, rb.dist), 1e-12);
        a = ra.state;
        b = rb.state;
    }
}

TEST(Perstep, ProbBlocksMustBeSimplices) {
    const Model m = perstep_model(CrfEncoding::prob, false);
    const RecurrentState z = RecurrentState::zeros(m.params.layers);
    EXPECT_NO_THROW(perstep_decode_step(m, Tensor::vector({0.3, 0.7 + 5e-7, 0.2, 0.2, 0.6}), 0, z));
    EXPECT_THROW(perstep_decode_step(m, Tensor::vector({0.3, 0.8, 0.2, 0.2, 0.6}), 0, z), DomainError);
    EXPECT_THROW(perstep_decode_step(m, Tensor::vector({1.2, -0.2, 0.2, 0.2, 0.6}), 0, z), DomainError);
    EXPECT_THROW(perstep_decode_step(m, Tensor::vector({0.5, 0.5, 1.0}), 0, z), DimensionError);
}

TEST(Distributions, AllEmittedDistributionsAreValid) {
    for (CaptionVariant v : {CaptionVariant::lrcn_1u, CaptionVariant::lrcn_2u, CaptionVariant::lrcn_2f}) {
        const Model m = random_caption_model(v, 14);
        const Unrolled u = unroll(m, {{Tensor::vector({3, -2, 1})}, {2, 2, 3, 1}});
        for (const auto& p : u.probs) expect_distribution(p);
    }
}
