#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrcn/model.hpp"
#include "lrcn/random.hpp"

namespace lrcn {

/// A small random model plus a batch it can be scored on.
struct Fixture {
    Model model;
    std::vector<Example> batch;
};

/// Topology names accepted by make_fixture.
inline const std::vector<std::string>& fixture_names() {
    static const std::vector<std::string> names{"classify",      "caption_1u",    "caption_2u",
                                                "caption_2f",    "encode_decode", "perstep_decode"};
    return names;
}

/// Adds uniform(-s, s) noise to every parameter so no block sits at a symmetric point.
inline void jitter(ModelParams& p, Rng& rng, double s) {
    p.for_each_block([&](const std::string&, Tensor& t) {
        for (double& v : t.values()) v += rng.uniform(-s, s);
    });
}

/**
 * Gradient-check sized topologies: N = 5 hidden units, d = 4 feature
 * dimensions, K = 6 tokens or 3 classes, T <= 4 steps, a batch of 2.
 * classify runs smallconv on 1x4x4 frames; captioners use an mlp1 extractor;
 * encode_decode a linear one; perstep_decode CRF-prob vectors with blocks {2, 3}.
 */
inline Fixture make_fixture(const std::string& name, std::uint64_t seed) {
    Rng rng(seed);
    const Vocabulary vocab = Vocabulary::from_words({"a", "b", "c"});
    ModelSpec s;
    s.hidden = 5;
    s.embed_dim = 4;
    s.vocab = vocab;
    auto random_tensor = [&](Shape shape) {
        Tensor t(std::move(shape));
        for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
        return t;
    };
    auto random_caption = [&](std::size_t len) {
        std::vector<std::size_t> c;
        for (std::size_t i = 0; i < len; ++i) c.push_back(3 + rng.index(vocab.size() - 3));
        c.push_back(vocab.eos);
        return c;
    };
    std::vector<Example> batch;
    if (name == "classify") {
        s.task = Task::classify;
        s.num_classes = 3;
        s.extractor = {ExtractorKind::smallconv, {1, 4, 4}, 4, 16, 2, 3};
        for (std::size_t b = 0; b < 2; ++b) {
            Example ex;
            for (std::size_t t = 0; t < 3; ++t) ex.inputs.push_back(random_tensor({1, 4, 4}));
            ex.labels = {rng.index(3)};
            batch.push_back(std::move(ex));
        }
    } else if (name.rfind("caption_", 0) == 0) {
        const CaptionVariant v = name == "caption_1u"   ? CaptionVariant::lrcn_1u
                                 : name == "caption_2u" ? CaptionVariant::lrcn_2u
                                 : name == "caption_2f" ? CaptionVariant::lrcn_2f
                                                        : throw DomainError("unknown fixture '" + name + "'");
        s = caption_spec(v, vocab, {ExtractorKind::mlp1, {5}, 4, 3}, 5, 4);
        for (std::size_t b = 0; b < 2; ++b) batch.push_back({{random_tensor({5})}, random_caption(2 + b)});
    } else if (name == "encode_decode") {
        s.task = Task::encode_decode;
        s.layers = 2;
        s.extractor = {ExtractorKind::linear, {3}, 4};
        for (std::size_t b = 0; b < 2; ++b) {
            Example ex;
            for (std::size_t t = 0; t < 2 + b; ++t) ex.inputs.push_back(random_tensor({3}));
            ex.labels = random_caption(2);
            batch.push_back(std::move(ex));
        }
    } else if (name == "perstep_decode") {
        s.task = Task::perstep_decode;
        s.crf = CrfEncoding::prob;
        s.crf_blocks = {2, 3};
        s.extractor = {ExtractorKind::identity, {5}};
        for (std::size_t b = 0; b < 2; ++b) {
            Tensor v({5});
            const double p = rng.uniform(0.1, 0.9);
            v[0] = p;
            v[1] = 1.0 - p;
            const double q = rng.uniform(0.1, 0.4), r = rng.uniform(0.1, 0.4);
            v[2] = q;
            v[3] = r;
            v[4] = 1.0 - q - r;
            batch.push_back({{v}, random_caption(2)});
        }
    } else {
        throw DomainError("unknown fixture '" + name + "'");
    }
    Fixture f{Model::initialized(s, rng), std::move(batch)};
    jitter(f.model.params, rng, 0.3);
    return f;
}

}  // namespace lrcn
