#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "lrcn/model.hpp"
#include "lrcn/random.hpp"
#include "lrcn/tensor.hpp"

namespace lrcn {

/// A partial or complete decode. `tokens` excludes the leading <BOS>.
struct Hypothesis {
    std::vector<std::size_t> tokens;
    double log_prob = 0.0;
    RecurrentState state;
    bool finished = false;  // ended with <EOS>
};

struct DecodeConfig {
    enum class Strategy { beam, sample };
    Strategy strategy = Strategy::beam;
    std::size_t width = 1;     // beam width, or number of samples
    double tau = 1.0;          // logit scale (inverse temperature), sampling only
    std::size_t max_len = 20;
    std::uint64_t seed = 0;
};

/**
 * Conditions a token-emitting model on one input and exposes the next-token
 * logits as a function of (state, previous token, output position).
 *
 * caption / perstep_decode: the single visual vector is fed at every step.
 * encode_decode: the encoder consumes x_1..x_{T-1} up front; x_T arrives
 * together with <BOS> at output position 0.
 */
class DecodeSource {
  public:
    DecodeSource(const Model& m, const std::vector<Tensor>& inputs) : model_(&m) {
        if (!m.spec.uses_tokens()) throw DomainError("model does not emit tokens");
        if (inputs.empty()) throw DomainError("decode: no inputs");
        initial_ = RecurrentState::zeros(m.params.layers);
        if (m.spec.task == Task::encode_decode) {
            for (std::size_t t = 0; t + 1 < inputs.size(); ++t) {
                const Tensor feat = extract(m, inputs[t]).out;
                initial_ = model_step(m, initial_, std::nullopt, &feat).stack.state;
            }
            visual_ = extract(m, inputs.back()).out;
        } else {
            if (inputs.size() != 1) throw DomainError("caption decoding takes a single input");
            if (m.spec.task == Task::perstep_decode) check_semantic_vector(m.spec, inputs[0]);
            visual_ = extract(m, inputs[0]).out;
        }
    }

    const Model& model() const { return *model_; }
    const RecurrentState& initial() const { return initial_; }
    std::size_t bos() const { return model_->spec.vocab.bos; }
    std::size_t eos() const { return model_->spec.vocab.eos; }

    Tensor logits(const RecurrentState& state, std::size_t prev, std::size_t position,
                  RecurrentState& next) const {
        const bool feed = model_->spec.task != Task::encode_decode || position == 0;
        ModelStep s = model_step(*model_, state, prev, feed ? &visual_ : nullptr);
        next = std::move(s.stack.state);
        return std::move(s.logits);
    }

  private:
    const Model* model_;
    RecurrentState initial_;
    Tensor visual_;
};

inline std::vector<double> log_softmax(const Tensor& logits) {
    const double mx = *std::max_element(logits.values().begin(), logits.values().end());
    double s = 0.0;
    for (double v : logits.values()) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

/// sum of log P(token_t | ...) along `tokens`, no <EOS> requirement.
inline double sequence_log_likelihood(const DecodeSource& src, const std::vector<std::size_t>& tokens) {
    RecurrentState state = src.initial(), next;
    std::size_t prev = src.bos();
    double ll = 0.0;
    for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
        const Tensor z = src.logits(state, prev, pos, next);
        ll += log_softmax_at(z.values(), tokens[pos]);
        state = std::move(next);
        prev = tokens[pos];
    }
    return ll;
}

/// Most probable token at every step (lowest index on ties).
inline Hypothesis greedy_decode(const DecodeSource& src, std::size_t max_len) {
    Hypothesis h;
    h.state = src.initial();
    std::size_t prev = src.bos();
    for (std::size_t pos = 0; pos < max_len; ++pos) {
        RecurrentState next;
        const std::vector<double> lp = log_softmax(src.logits(h.state, prev, pos, next));
        std::size_t best = 0;
        for (std::size_t k = 1; k < lp.size(); ++k)
            if (lp[k] > lp[best]) best = k;
        h.tokens.push_back(best);
        h.log_prob += lp[best];
        h.state = std::move(next);
        prev = best;
        if (best == src.eos()) {
            h.finished = true;
            break;
        }
    }
    return h;
}

/**
 * Beam search. Every live hypothesis is expanded over the whole vocabulary;
 * the `width` best candidates by cumulative log-probability survive (ties:
 * parent rank, then token index). Candidates ending in <EOS> move to a
 * completed pool and stop expanding. The search stops once the pool holds
 * `width` hypotheses or no live beam remains; beams that reach `max_len`
 * without <EOS> join the pool unfinished. The pool is returned best first
 * (ties: earlier completion first), truncated to `width`. No length
 * normalization is applied.
 */
inline std::vector<Hypothesis> beam_search(const DecodeSource& src, std::size_t width,
                                           std::size_t max_len) {
    if (width == 0) throw DomainError("beam width must be positive");
    struct Candidate {
        double score;
        std::size_t parent;
        std::size_t token;
    };
    std::vector<Hypothesis> live(1);
    live[0].state = src.initial();
    std::vector<Hypothesis> completed;
    for (std::size_t pos = 0; pos < max_len && !live.empty() && completed.size() < width; ++pos) {
        std::vector<Candidate> cands;
        std::vector<RecurrentState> next_states(live.size());
        for (std::size_t p = 0; p < live.size(); ++p) {
            const std::size_t prev = live[p].tokens.empty() ? src.bos() : live[p].tokens.back();
            const std::vector<double> lp =
                log_softmax(src.logits(live[p].state, prev, pos, next_states[p]));
            for (std::size_t k = 0; k < lp.size(); ++k) cands.push_back({live[p].log_prob + lp[k], p, k});
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            return a.score > b.score;
        });
        if (cands.size() > width) cands.resize(width);
        std::vector<Hypothesis> next_live;
        for (const Candidate& c : cands) {
            Hypothesis h;
            h.tokens = live[c.parent].tokens;
            h.tokens.push_back(c.token);
            h.log_prob = c.score;
            h.state = next_states[c.parent];
            if (c.token == src.eos()) {
                h.finished = true;
                completed.push_back(std::move(h));
            } else {
                next_live.push_back(std::move(h));
            }
        }
        live = std::move(next_live);
    }
    for (auto& h : live)
        if (h.tokens.size() == max_len) completed.push_back(std::move(h));
    std::stable_sort(completed.begin(), completed.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
    if (completed.size() > width) completed.resize(width);
    return completed;
}

struct SampleResult {
    Hypothesis best;
    std::vector<Hypothesis> samples;
};

/**
 * Draws `n` sequences token by token from softmax(tau * logits) and returns
 * the one with the highest unscaled log-probability (earliest on ties).
 */
inline SampleResult sample_decode(const DecodeSource& src, std::size_t n, double tau,
                                  std::size_t max_len, std::uint64_t seed) {
    if (n == 0) throw DomainError("sample count must be positive");
    if (!(tau > 0.0)) throw DomainError("logit scale must be positive");
    Rng rng(seed);
    SampleResult r;
    for (std::size_t s = 0; s < n; ++s) {
        Hypothesis h;
        h.state = src.initial();
        std::size_t prev = src.bos();
        for (std::size_t pos = 0; pos < max_len; ++pos) {
            RecurrentState next;
            const Tensor z = src.logits(h.state, prev, pos, next);
            Tensor scaled = z;
            for (double& v : scaled.values()) v *= tau;
            const Tensor p = softmax(scaled);
            const double u = rng.uniform();
            double cum = 0.0;
            std::size_t tok = p.size();
            std::size_t last_nonzero = 0;
            for (std::size_t k = 0; k < p.size(); ++k) {
                if (p[k] > 0.0) last_nonzero = k;
                cum += p[k];
                if (tok == p.size() && u < cum) tok = k;
            }
            if (tok == p.size()) tok = last_nonzero;
            h.tokens.push_back(tok);
            h.log_prob += log_softmax_at(z.values(), tok);
            h.state = std::move(next);
            prev = tok;
            if (tok == src.eos()) {
                h.finished = true;
                break;
            }
        }
        r.samples.push_back(std::move(h));
    }
    std::size_t best = 0;
    for (std::size_t s = 1; s < r.samples.size(); ++s)
        if (r.samples[s].log_prob > r.samples[best].log_prob) best = s;
    r.best = r.samples[best];
    return r;
}

/// Runs the configured strategy and returns its single best hypothesis.
inline Hypothesis decode(const DecodeSource& src, const DecodeConfig& cfg) {
    if (cfg.strategy == DecodeConfig::Strategy::sample)
        return sample_decode(src, cfg.width, cfg.tau, cfg.max_len, cfg.seed).best;
    auto beams = beam_search(src, cfg.width, cfg.max_len);
    return beams.front();
}

}  // namespace lrcn
