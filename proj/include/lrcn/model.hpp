#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lrcn/cells.hpp"
#include "lrcn/features.hpp"
#include "lrcn/random.hpp"
#include "lrcn/tensor.hpp"

namespace lrcn {

/// Thrown for out-of-range tokens, labels and malformed semantic inputs.
class DomainError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/**
 * Task topologies. `tag` is the generic T-inputs/T-outputs recurrence with
 * an optional label per step; the other four are the sequence-classifier,
 * captioner, encoder-decoder and per-step-input decoder.
 */
enum class Task { classify, caption, encode_decode, perstep_decode, tag };
enum class CellType { rnn, lstm };
enum class CrfEncoding { max, prob };

inline std::string_view to_string(Task t) {
    switch (t) {
        case Task::classify: return "classify";
        case Task::caption: return "caption";
        case Task::encode_decode: return "encode_decode";
        case Task::perstep_decode: return "perstep_decode";
        case Task::tag: return "tag";
    }
    return "?";
}

inline Task task_from(std::string_view s) {
    if (s == "classify") return Task::classify;
    if (s == "caption") return Task::caption;
    if (s == "encode_decode") return Task::encode_decode;
    if (s == "perstep_decode") return Task::perstep_decode;
    if (s == "tag") return Task::tag;
    throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

inline constexpr std::size_t kNoLabel = std::numeric_limits<std::size_t>::max();

// ---------------------------------------------------------------------------
// Vocabulary

struct Vocabulary {
    std::vector<std::string> tokens;
    std::size_t bos = 0;
    std::size_t eos = 1;
    std::optional<std::size_t> unk;

    static constexpr std::string_view kBos = "<BOS>";
    static constexpr std::string_view kEos = "<EOS>";
    static constexpr std::string_view kUnk = "<UNK>";

    /// <BOS>=0, <EOS>=1, <UNK>=2, then `words` in order (duplicates dropped).
    static Vocabulary from_words(const std::vector<std::string>& words) {
        Vocabulary v;
        v.tokens = {std::string(kBos), std::string(kEos), std::string(kUnk)};
        v.bos = 0;
        v.eos = 1;
        v.unk = 2;
        for (const auto& w : words)
            if (std::find(v.tokens.begin(), v.tokens.end(), w) == v.tokens.end())
                v.tokens.push_back(w);
        v.rebuild_index();
        return v;
    }

    std::size_t size() const { return tokens.size(); }

    void rebuild_index() {
        index_.clear();
        for (std::size_t i = 0; i < tokens.size(); ++i) index_.emplace(tokens[i], i);
    }

    /// Token id; out-of-vocabulary words map to <UNK> when present.
    std::size_t id(const std::string& word) const {
        if (auto it = index_.find(word); it != index_.end()) return it->second;
        if (unk) return *unk;
        throw DomainError("word '" + word + "' is not in the vocabulary and there is no <UNK>");
    }

    const std::string& word(std::size_t token) const {
        if (token >= tokens.size())
            throw DomainError("token " + std::to_string(token) + " out of range for vocabulary of " +
                              std::to_string(tokens.size()));
        return tokens.at(token);
    }

    void validate() const {
        const std::size_t k = tokens.size();
        if (bos >= k || eos >= k || (unk && *unk >= k))
            throw DomainError("vocabulary special index out of range");
        if (bos == eos || (unk && (*unk == bos || *unk == eos)))
            throw DomainError("vocabulary special indices must be distinct");
    }

    bool operator==(const Vocabulary& o) const {
        return tokens == o.tokens && bos == o.bos && eos == o.eos && unk == o.unk;
    }

  private:
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Topology and parameters

struct ModelSpec {
    Task task = Task::caption;
    CellType cell = CellType::lstm;
    Nonlinearity rnn_nonlinearity = Nonlinearity::tanh;
    std::size_t layers = 1;
    bool factored = false;
    std::size_t injection_layer = 1;  // 1-based layer receiving the visual vector
    std::size_t hidden = 16;
    std::size_t embed_dim = 8;
    std::size_t num_classes = 0;  // classify / tag
    FeatureExtractorSpec extractor;
    Vocabulary vocab;
    /// Every step starts from a zero state: a per-frame model under late fusion.
    bool stateless = false;
    CrfEncoding crf = CrfEncoding::max;
    std::vector<std::size_t> crf_blocks;  // perstep_decode: sizes of the semantic slots

    bool uses_tokens() const {
        return task == Task::caption || task == Task::encode_decode || task == Task::perstep_decode;
    }

    std::size_t visual_dim() const { return extractor.out_dim(); }

    std::size_t output_size() const { return uses_tokens() ? vocab.size() : num_classes; }

    std::size_t layer_input_size(std::size_t l) const {
        std::size_t n = l == 0 ? (uses_tokens() ? embed_dim : 0) : hidden;
        if (injection_layer == l + 1) n += visual_dim();
        return n;
    }

    void validate() const {
        if (layers == 0 || hidden == 0) throw DimensionError("model needs at least one layer and unit");
        extractor.validate();
        if (factored) {
            if (layers < 2 || injection_layer < 2 || injection_layer > layers)
                throw DimensionError("factored model needs L >= 2 and injection layer in [2, L]");
        } else if (injection_layer != 1) {
            throw DimensionError("unfactored model injects the visual vector at layer 1");
        }
        if (task == Task::caption && layers > 2)
            throw DimensionError("caption models are limited to the 1u, 2u and 2f variants");
        if (uses_tokens()) {
            vocab.validate();
            if (embed_dim == 0) throw DimensionError("embedding dimension must be positive");
        } else {
            if (num_classes == 0) throw DimensionError("classifier needs at least one class");
            if (factored) throw DimensionError("classification models feed phi to layer 1");
        }
        if (task == Task::perstep_decode) {
            if (extractor.kind != ExtractorKind::identity)
                throw DimensionError("perstep_decode consumes semantic vectors directly");
            if (!crf_blocks.empty()) {
                std::size_t total = 0;
                for (std::size_t b : crf_blocks) total += b;
                if (total != extractor.input_size())
                    throw DimensionError("CRF block sizes do not sum to the visual vector size");
            }
        }
    }
};

enum class CaptionVariant { lrcn_1u, lrcn_2u, lrcn_2f };

/// One of the three captioning stacks: 1 layer; 2 layers unfactored; 2 layers
/// with the image entering at layer 2.
inline ModelSpec caption_spec(CaptionVariant v, Vocabulary vocab, FeatureExtractorSpec extractor,
                              std::size_t hidden, std::size_t embed_dim,
                              CellType cell = CellType::lstm) {
    ModelSpec s;
    s.task = Task::caption;
    s.cell = cell;
    s.layers = v == CaptionVariant::lrcn_1u ? 1 : 2;
    s.factored = v == CaptionVariant::lrcn_2f;
    s.injection_layer = s.factored ? 2 : 1;
    s.hidden = hidden;
    s.embed_dim = embed_dim;
    s.extractor = std::move(extractor);
    s.vocab = std::move(vocab);
    return s;
}

struct EmbeddingParams {
    Tensor W_e;  // d_e x K
};

struct PredictionParams {
    Tensor W_z;  // |C| x N
    Tensor b_z;  // |C|
};

struct ModelParams {
    FeatureExtractor extractor;
    EmbeddingParams embedding;
    std::vector<CellParams> layers;
    PredictionParams prediction;

    template <class F>
    void for_each_block(F&& f) {
        extractor.for_each_block(
            [&](std::string_view n, Tensor& t) { f("phi." + std::string(n), t); });
        if (!embedding.W_e.empty()) f(std::string("embed.W_e"), embedding.W_e);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string prefix = "layer" + std::to_string(l) + ".";
            lrcn::for_each_block(layers[l],
                                 [&](std::string_view n, Tensor& t) { f(prefix + std::string(n), t); });
        }
        f(std::string("predict.W_z"), prediction.W_z);
        f(std::string("predict.b_z"), prediction.b_z);
    }
    template <class F>
    void for_each_block(F&& f) const {
        const_cast<ModelParams*>(this)->for_each_block(
            [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_block([&](const std::string&, const Tensor& t) { n += t.size(); });
        return n;
    }

    void fill(double v) {
        for_each_block([&](const std::string&, Tensor& t) { t.fill(v); });
    }

    bool operator==(const ModelParams& o) const {
        bool eq = true;
        std::vector<const Tensor*> mine, theirs;
        for_each_block([&](const std::string&, const Tensor& t) { mine.push_back(&t); });
        o.for_each_block([&](const std::string&, const Tensor& t) { theirs.push_back(&t); });
        if (mine.size() != theirs.size()) return false;
        for (std::size_t i = 0; i < mine.size(); ++i) eq = eq && *mine[i] == *theirs[i];
        return eq;
    }
};

struct Model {
    ModelSpec spec;
    ModelParams params;

    static Model zeros(const ModelSpec& spec) {
        spec.validate();
        Model m{spec, {}};
        m.params.extractor = FeatureExtractor::zeros(spec.extractor);
        if (spec.uses_tokens()) m.params.embedding.W_e = Tensor({spec.embed_dim, spec.vocab.size()});
        for (std::size_t l = 0; l < spec.layers; ++l) {
            const std::size_t in = spec.layer_input_size(l);
            if (spec.cell == CellType::lstm)
                m.params.layers.emplace_back(LstmCellParams::zeros(spec.hidden, in));
            else
                m.params.layers.emplace_back(RnnCellParams::zeros(spec.hidden, in, spec.rnn_nonlinearity));
        }
        m.params.prediction = {Tensor({spec.output_size(), spec.hidden}), Tensor({spec.output_size()})};
        return m;
    }

    /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget bias +1.
    static Model initialized(const ModelSpec& spec, Rng& rng) {
        Model m = zeros(spec);
        m.params.extractor.init_uniform(rng);
        if (!m.params.embedding.W_e.empty()) {
            const double s = 1.0 / std::sqrt(static_cast<double>(spec.vocab.size()));
            for (double& v : m.params.embedding.W_e.values()) v = rng.uniform(-s, s);
        }
        for (auto& layer : m.params.layers) init_uniform(layer, rng);
        if (spec.stateless)
            for (auto& layer : m.params.layers)
                for_each_block(layer, [](std::string_view n, Tensor& t) {
                    if (n[0] == 'W' && n[2] == 'h') t.fill(0.0);
                });
        const double s = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
        for (double& v : m.params.prediction.W_z.values()) v = rng.uniform(-s, s);
        return m;
    }
};

/// Parameter-shaped zeros, used as a gradient accumulator.
inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams g = p;
    g.fill(0.0);
    return g;
}

// ---------------------------------------------------------------------------
// Building blocks

/// Column `token` of W_e, i.e. W_e times the one-hot vector of `token`.
inline Tensor embed(const EmbeddingParams& e, std::size_t token) {
    const std::size_t d = e.W_e.dim(0), k = e.W_e.dim(1);
    if (token >= k)
        throw DomainError("token " + std::to_string(token) + " out of range for vocabulary of " +
                          std::to_string(k));
    Tensor out({d});
    for (std::size_t r = 0; r < d; ++r) out[r] = e.W_e(r, token);
    return out;
}

inline Tensor predict_logits(const PredictionParams& p, const Tensor& h) {
    Tensor z = p.b_z;
    matvec_acc(p.W_z, h.values(), z.values());
    return z;
}

inline FeatureOutput extract(const Model& m, const Tensor& x) {
    return phi_forward(m.params.extractor, x);
}

/// Rejects CRF inputs that are not one-hot (max) or not on the simplex (prob) per slot.
inline void check_semantic_vector(const ModelSpec& spec, const Tensor& v) {
    if (v.size() != spec.extractor.input_size())
        throw DimensionError("semantic vector of size " + std::to_string(v.size()) +
                             ", expected " + std::to_string(spec.extractor.input_size()));
    std::vector<std::size_t> blocks = spec.crf_blocks;
    if (blocks.empty()) blocks.push_back(v.size());
    std::size_t off = 0;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        double s = 0.0;
        std::size_t ones = 0;
        for (std::size_t k = off; k < off + blocks[bi]; ++k) {
            if (v[k] < 0.0 || !std::isfinite(v[k]))
                throw DomainError("semantic block " + std::to_string(bi) + " has a negative entry");
            s += v[k];
            if (v[k] == 1.0) ++ones;
        }
        if (spec.crf == CrfEncoding::max) {
            if (ones != 1 || s != 1.0)
                throw DomainError("CRF-max block " + std::to_string(bi) + " is not one-hot");
        } else if (std::abs(s - 1.0) > 1e-6) {
            throw DomainError("CRF-prob block " + std::to_string(bi) + " sums to " +
                              std::to_string(s));
        }
        off += blocks[bi];
    }
}

struct ModelStep {
    StackStep stack;
    Tensor logits;
};

/**
 * One step of the sequence model. Layer-1 input is [W_e onehot(token) || ...]
 * for token-consuming tasks; `visual` is concatenated at the injection layer.
 * Absent token or visual inputs are fed as zero blocks.
 */
inline ModelStep model_step(const Model& m, const RecurrentState& prev,
                            std::optional<std::size_t> token, const Tensor* visual,
                            const std::vector<Tensor>* masks = nullptr) {
    const ModelSpec& s = m.spec;
    Tensor bottom;
    if (s.uses_tokens())
        bottom = token ? embed(m.params.embedding, *token) : Tensor({s.embed_dim});
    Tensor zero_visual;
    if (!visual) {
        zero_visual = Tensor({s.visual_dim()});
        visual = &zero_visual;
    } else if (visual->size() != s.visual_dim()) {
        throw DimensionError("visual vector of size " + std::to_string(visual->size()) +
                             ", model expects " + std::to_string(s.visual_dim()));
    }
    const RecurrentState zero_state =
        s.stateless ? RecurrentState::zeros(m.params.layers) : RecurrentState{};
    ModelStep out;
    out.stack = stack_step(m.params.layers, bottom, s.stateless ? zero_state : prev,
                           Injection{visual, s.injection_layer - 1}, masks);
    out.logits = predict_logits(m.params.prediction, out.stack.state.top_h());
    return out;
}

// ---------------------------------------------------------------------------
// Labeled examples and their unrolled step plan

/**
 * A labeled sequence.
 *   classify:        inputs = frames,       labels = {class}
 *   tag:             inputs = frames,       labels = one per frame (kNoLabel = none)
 *   caption:         inputs = {image},      labels = caption tokens ending in EOS
 *   perstep_decode:  inputs = {semantic},   labels = caption tokens ending in EOS
 *   encode_decode:   inputs = x_1..x_T,     labels = output tokens ending in EOS
 */
struct Example {
    std::vector<Tensor> inputs;
    std::vector<std::size_t> labels;

    bool operator==(const Example&) const = default;
};

struct PlannedStep {
    std::optional<std::size_t> token;   // previous-token input
    std::optional<std::size_t> visual;  // index into the example's inputs
    std::optional<std::size_t> target;
};

/**
 * Lays out the recurrence for one example.
 *
 * classify repeats the class label at every frame. caption and perstep
 * duplicate the single visual input at every step with teacher forcing.
 * encode_decode runs T + T' - 1 steps: steps 1..T consume x_t, step T also
 * consumes <BOS> and predicts y_1, and the remaining T' - 1 steps consume
 * y_1..y_{T'-1} alone.
 */
inline std::vector<PlannedStep> plan_steps(const ModelSpec& s, const Example& ex) {
    if (ex.inputs.empty()) throw DomainError("example has no inputs");
    const std::size_t C = s.output_size();
    for (std::size_t y : ex.labels)
        if (y != kNoLabel && y >= C)
            throw DomainError("label " + std::to_string(y) + " out of range for " +
                              std::to_string(C) + " outputs");
    std::vector<PlannedStep> plan;
    switch (s.task) {
        case Task::classify:
            if (ex.labels.size() != 1) throw DomainError("classify example needs exactly one label");
            for (std::size_t t = 0; t < ex.inputs.size(); ++t) plan.push_back({{}, t, ex.labels[0]});
            break;
        case Task::tag:
            if (ex.labels.size() != ex.inputs.size())
                throw DomainError("tag example needs one label per frame");
            for (std::size_t t = 0; t < ex.inputs.size(); ++t)
                plan.push_back({{}, t, ex.labels[t] == kNoLabel ? std::nullopt
                                                                : std::optional(ex.labels[t])});
            break;
        case Task::caption:
        case Task::perstep_decode: {
            if (ex.inputs.size() != 1) throw DomainError("caption example needs exactly one input");
            if (ex.labels.empty() || ex.labels.back() != s.vocab.eos)
                throw DomainError("caption must be non-empty and end with <EOS>");
            std::size_t prev = s.vocab.bos;
            for (std::size_t y : ex.labels) {
                plan.push_back({prev, 0, y});
                prev = y;
            }
            break;
        }
        case Task::encode_decode: {
            if (ex.labels.empty() || ex.labels.back() != s.vocab.eos)
                throw DomainError("target sequence must be non-empty and end with <EOS>");
            const std::size_t T = ex.inputs.size();
            for (std::size_t t = 0; t + 1 < T; ++t) plan.push_back({{}, t, {}});
            plan.push_back({s.vocab.bos, T - 1, ex.labels[0]});
            for (std::size_t j = 1; j < ex.labels.size(); ++j)
                plan.push_back({ex.labels[j - 1], {}, ex.labels[j]});
            break;
        }
    }
    return plan;
}

/// Forward pass over a whole example with everything backward needs.
struct Unrolled {
    std::vector<PlannedStep> plan;
    std::vector<FeatureOutput> visuals;
    std::vector<ModelStep> steps;
    std::vector<Tensor> probs;      // softmax at steps with a target
    std::vector<double> step_nll;   // -log p(target), 0 where no target
    double nll = 0.0;
};

/**
 * Runs `ex` through the model. With `dropout > 0` and an rng, inverted
 * dropout masks are drawn for every layer input at every step.
 */
inline Unrolled unroll(const Model& m, const Example& ex, double dropout = 0.0,
                       Rng* rng = nullptr) {
    Unrolled u;
    u.plan = plan_steps(m.spec, ex);
    if (m.spec.task == Task::perstep_decode) check_semantic_vector(m.spec, ex.inputs[0]);
    u.visuals.reserve(ex.inputs.size());
    for (const Tensor& x : ex.inputs) u.visuals.push_back(extract(m, x));
    RecurrentState state = RecurrentState::zeros(m.params.layers);
    u.steps.reserve(u.plan.size());
    std::vector<Tensor> masks;
    for (const PlannedStep& ps : u.plan) {
        if (dropout > 0.0 && rng) {
            masks.assign(m.spec.layers, Tensor{});
            const double keep = 1.0 / (1.0 - dropout);
            for (std::size_t l = 0; l < m.spec.layers; ++l) {
                masks[l] = Tensor({m.spec.layer_input_size(l)});
                for (double& v : masks[l].values()) v = rng->bernoulli(dropout) ? 0.0 : keep;
            }
        }
        const Tensor* vis = ps.visual ? &u.visuals[*ps.visual].out : nullptr;
        ModelStep step = model_step(m, state, ps.token, vis, masks.empty() ? nullptr : &masks);
        state = step.stack.state;
        if (ps.target) {
            Tensor p = softmax(step.logits);
            const double lp = log_softmax_at(step.logits.values(), *ps.target);
            u.step_nll.push_back(-lp);
            u.nll -= lp;
            u.probs.push_back(std::move(p));
        } else {
            u.step_nll.push_back(0.0);
            u.probs.emplace_back();
        }
        u.steps.push_back(std::move(step));
    }
    return u;
}

/**
 * BPTT for an Unrolled example: accumulates scale * dNLL/dtheta into `grads`
 * (prediction, recurrent stack, embedding and extractor).
 */
inline void backprop(const Model& m, const Unrolled& u, double scale, ModelParams& grads) {
    const ModelSpec& s = m.spec;
    RecurrentState carry = RecurrentState::zeros(m.params.layers);
    std::vector<Tensor> dvisual(u.visuals.size());
    for (std::size_t t = u.steps.size(); t-- > 0;) {
        const ModelStep& step = u.steps[t];
        const PlannedStep& ps = u.plan[t];
        Tensor dh_top;
        if (ps.target) {
            Tensor dz = u.probs[t];
            dz[*ps.target] -= 1.0;
            for (double& v : dz.values()) v *= scale;
            outer_acc(grads.prediction.W_z, dz.values(), step.stack.state.top_h().values());
            add_inplace(grads.prediction.b_z.values(), dz.values());
            dh_top = Tensor({s.hidden});
            matvec_t_acc(m.params.prediction.W_z, dz.values(), dh_top.values());
        }
        StackInputGrads g =
            stack_step_backward(m.params.layers, step.stack, dh_top, carry, grads.layers);
        if (s.stateless)
            for (auto& layer : carry.layers) {
                layer.h.fill(0.0);
                layer.c.fill(0.0);
            }
        if (ps.token && !g.bottom.empty()) {
            Tensor& W = grads.embedding.W_e;
            for (std::size_t r = 0; r < s.embed_dim; ++r) W(r, *ps.token) += g.bottom[r];
        }
        if (ps.visual) {
            Tensor& dv = dvisual[*ps.visual];
            if (dv.empty()) dv = Tensor({s.visual_dim()});
            add_inplace(dv.values(), g.side.values());
        }
    }
    if (s.extractor.kind == ExtractorKind::identity) return;
    for (std::size_t k = 0; k < u.visuals.size(); ++k)
        if (!dvisual[k].empty())
            phi_backward(m.params.extractor, u.visuals[k].cache, dvisual[k], grads.extractor);
}

// ---------------------------------------------------------------------------
// Task-level inference

/// Softmax at every frame of a classify/tag model.
inline std::vector<Tensor> per_step_distributions(const Model& m, const std::vector<Tensor>& frames) {
    if (frames.empty()) throw DomainError("empty frame sequence");
    std::vector<Tensor> out;
    RecurrentState state = RecurrentState::zeros(m.params.layers);
    for (const Tensor& x : frames) {
        const Tensor feat = extract(m, x).out;
        ModelStep step = model_step(m, state, std::nullopt, &feat);
        state = std::move(step.stack.state);
        out.push_back(softmax(step.logits));
    }
    return out;
}

/// Late fusion: arithmetic mean of the per-frame softmax outputs.
inline Tensor classify_sequence(const Model& m, const std::vector<Tensor>& frames) {
    if (m.spec.task != Task::classify && m.spec.task != Task::tag)
        throw DomainError("classify_sequence needs a classification model");
    const std::vector<Tensor> dists = per_step_distributions(m, frames);
    Tensor avg = zeros_like(dists.front());
    for (const Tensor& p : dists) add_inplace(avg.values(), p.values());
    for (double& v : avg.values()) v /= static_cast<double>(dists.size());
    return avg;
}

inline std::size_t argmax(const Tensor& t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (t[i] > t[best]) best = i;
    return best;
}

struct CaptionStepResult {
    Tensor dist;
    RecurrentState state;
};

/// One captioning step given phi(x) (already extracted) and the previous token.
inline CaptionStepResult caption_step(const Model& m, const Tensor& img_feat, std::size_t prev_token,
                                      const RecurrentState& state) {
    if (!m.spec.uses_tokens()) throw DomainError("caption_step needs a token-consuming model");
    ModelStep step = model_step(m, state, prev_token, &img_feat);
    return {softmax(step.logits), std::move(step.stack.state)};
}

/// The per-step decoder over CRF-max / CRF-prob semantic vectors.
inline CaptionStepResult perstep_decode_step(const Model& m, const Tensor& visual_vec,
                                             std::size_t prev_token, const RecurrentState& state) {
    if (m.spec.task != Task::perstep_decode) throw DomainError("model is not a perstep decoder");
    check_semantic_vector(m.spec, visual_vec);
    return caption_step(m, visual_vec, prev_token, state);
}

/// sum_t log P(y_t | y_{<t}, phi(x)) under teacher forcing with y_0 = <BOS>.
inline double caption_log_likelihood(const Model& m, const Tensor& img_feat,
                                     const std::vector<std::size_t>& caption) {
    if (caption.empty() || caption.back() != m.spec.vocab.eos)
        throw DomainError("caption must be non-empty and end with <EOS>");
    RecurrentState state = RecurrentState::zeros(m.params.layers);
    std::size_t prev = m.spec.vocab.bos;
    double ll = 0.0;
    for (std::size_t y : caption) {
        if (y >= m.spec.vocab.size())
            throw DomainError("token " + std::to_string(y) + " out of range");
        ModelStep step = model_step(m, state, prev, &img_feat);
        ll += log_softmax_at(step.logits.values(), y);
        state = std::move(step.stack.state);
        prev = y;
    }
    return ll;
}

/**
 * Encoder-decoder inference with the model's own argmax fed back; returns
 * one output distribution per emitted token (stops after <EOS> or
 * `max_out_len` outputs).
 */
inline std::vector<Tensor> encode_decode(const Model& m, const std::vector<Tensor>& input_seq,
                                         std::size_t max_out_len) {
    if (m.spec.task != Task::encode_decode) throw DomainError("model is not an encoder-decoder");
    if (input_seq.empty()) throw DomainError("encode_decode: empty input sequence");
    RecurrentState state = RecurrentState::zeros(m.params.layers);
    for (std::size_t t = 0; t + 1 < input_seq.size(); ++t) {
        const Tensor feat = extract(m, input_seq[t]).out;
        state = model_step(m, state, std::nullopt, &feat).stack.state;
    }
    const Tensor last = extract(m, input_seq.back()).out;
    std::vector<Tensor> out;
    std::size_t prev = m.spec.vocab.bos;
    for (std::size_t j = 0; j < max_out_len; ++j) {
        ModelStep step = model_step(m, state, prev, j == 0 ? &last : nullptr);
        state = std::move(step.stack.state);
        out.push_back(softmax(step.logits));
        prev = argmax(out.back());
        if (prev == m.spec.vocab.eos) break;
    }
    return out;
}

}  // namespace lrcn
