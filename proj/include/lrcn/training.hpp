#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lrcn/model.hpp"
#include "lrcn/random.hpp"
#include "lrcn/tensor.hpp"

namespace lrcn {

// ---------------------------------------------------------------------------
// Batches

/**
 * Examples padded to a common input length. mask[i][t] is 1 exactly for the
 * first lengths[i] input positions; padded positions hold zero tensors and
 * never reach the model.
 */
struct SequenceBatch {
    std::vector<std::vector<Tensor>> inputs;
    std::vector<std::vector<std::size_t>> labels;
    std::vector<std::size_t> lengths;
    std::vector<std::vector<std::uint8_t>> mask;

    static SequenceBatch from(const std::vector<Example>& examples) {
        SequenceBatch b;
        std::size_t max_len = 0;
        for (const auto& ex : examples) max_len = std::max(max_len, ex.inputs.size());
        for (const auto& ex : examples) {
            std::vector<Tensor> padded = ex.inputs;
            std::vector<std::uint8_t> m(max_len, 0);
            std::fill_n(m.begin(), ex.inputs.size(), std::uint8_t{1});
            while (padded.size() < max_len) padded.push_back(zeros_like(ex.inputs.front()));
            b.inputs.push_back(std::move(padded));
            b.labels.push_back(ex.labels);
            b.lengths.push_back(ex.inputs.size());
            b.mask.push_back(std::move(m));
        }
        return b;
    }

    std::size_t size() const { return lengths.size(); }
    std::size_t padded_length() const { return inputs.empty() ? 0 : inputs.front().size(); }

    /// The i-th sequence with its padding removed.
    Example example(std::size_t i) const {
        Example ex;
        for (std::size_t t = 0; t < inputs[i].size(); ++t)
            if (mask[i][t]) ex.inputs.push_back(inputs[i][t]);
        ex.labels = labels[i];
        return ex;
    }
};

// ---------------------------------------------------------------------------
// Objective

struct LossReport {
    double mean_nll = 0.0;            // mean over sequences of the summed per-step NLL
    std::vector<double> per_step;     // summed NLL at each step position, averaged over sequences
    std::size_t sequences = 0;
    std::size_t targets = 0;          // number of predicted labels/tokens

    double nll_per_target() const {
        return targets ? mean_nll * static_cast<double>(sequences) / static_cast<double>(targets)
                       : 0.0;
    }
};

inline void accumulate(LossReport& r, const Unrolled& u) {
    r.mean_nll += u.nll;
    if (r.per_step.size() < u.step_nll.size()) r.per_step.resize(u.step_nll.size(), 0.0);
    for (std::size_t t = 0; t < u.step_nll.size(); ++t) {
        r.per_step[t] += u.step_nll[t];
        if (u.plan[t].target) ++r.targets;
    }
    ++r.sequences;
}

inline void finish(LossReport& r) {
    if (!r.sequences) return;
    const double n = static_cast<double>(r.sequences);
    r.mean_nll /= n;
    for (double& v : r.per_step) v /= n;
}

/// -(1/|D|) sum over sequences of sum_t log P(y_t | ...).
inline LossReport sequence_nll(const Model& m, const SequenceBatch& batch) {
    LossReport r;
    for (std::size_t i = 0; i < batch.size(); ++i) accumulate(r, unroll(m, batch.example(i)));
    finish(r);
    return r;
}

inline LossReport sequence_nll(const Model& m, const std::vector<Example>& examples) {
    LossReport r;
    for (const auto& ex : examples) accumulate(r, unroll(m, ex));
    finish(r);
    return r;
}

struct LossAndGrad {
    LossReport loss;
    ModelParams grad;
};

/// Mean NLL over `examples` and its gradient with respect to every block.
inline LossAndGrad loss_and_grad(const Model& m, const std::vector<const Example*>& examples,
                                 double dropout = 0.0, Rng* rng = nullptr) {
    LossAndGrad out{{}, zeros_like(m.params)};
    const double scale = 1.0 / static_cast<double>(examples.size());
    for (const Example* ex : examples) {
        Unrolled u = unroll(m, *ex, dropout, rng);
        accumulate(out.loss, u);
        backprop(m, u, scale, out.grad);
    }
    finish(out.loss);
    return out;
}

inline LossAndGrad loss_and_grad(const Model& m, const std::vector<Example>& examples) {
    std::vector<const Example*> ptrs;
    for (const auto& ex : examples) ptrs.push_back(&ex);
    return loss_and_grad(m, ptrs);
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted-dropout multipliers: 0 with probability p, else 1/(1-p).
inline Tensor dropout_mask(const Shape& shape, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0))
        throw DomainError("dropout probability must lie in [0, 1), got " + std::to_string(p));
    Tensor m(shape, 1.0);
    if (p == 0.0) return m;
    const double keep = 1.0 / (1.0 - p);
    for (double& v : m.values()) v = rng.bernoulli(p) ? 0.0 : keep;
    return m;
}

inline Tensor apply_dropout(const Tensor& x, double p, const Tensor& mask) {
    if (!(p >= 0.0 && p < 1.0))
        throw DomainError("dropout probability must lie in [0, 1), got " + std::to_string(p));
    if (p == 0.0) return x;
    return hadamard(x, mask);
}

inline Tensor apply_dropout(const Tensor& x, double p, Rng& rng) {
    return apply_dropout(x, p, dropout_mask(x.shape(), p, rng));
}

// ---------------------------------------------------------------------------
// SGD

struct TrainConfig {
    double learning_rate = 0.1;
    std::size_t batch_size = 16;
    std::size_t epochs = 10;
    double dropout = 0.0;
    std::size_t clip_length = 16;  // classify: frames per training clip
    std::uint64_t seed = 0;
    std::optional<double> grad_clip;  // global L2 norm threshold
    bool freeze_extractor = false;

    void validate() const {
        if (!(learning_rate >= 0.0)) throw DomainError("learning rate must be non-negative");
        if (batch_size == 0) throw DomainError("batch size must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw DomainError("dropout must lie in [0, 1)");
        if (clip_length == 0) throw DomainError("clip length must be positive");
        if (grad_clip && !(*grad_clip > 0.0)) throw DomainError("gradient clip must be positive");
    }
};

inline double global_norm(const ModelParams& g) {
    double s = 0.0;
    g.for_each_block([&](const std::string&, const Tensor& t) {
        for (double v : t.values()) s += v * v;
    });
    return std::sqrt(s);
}

/// Throws NumericError naming the first block holding a NaN/Inf.
inline void check_finite(const ModelParams& g, const LossReport& loss) {
    g.for_each_block([&](const std::string& name, const Tensor& t) {
        if (!t.all_finite()) throw NumericError("non-finite gradient in parameter block " + name);
    });
    if (!std::isfinite(loss.mean_nll)) throw NumericError("non-finite loss");
}

/// theta <- theta - lr * grad, skipping frozen blocks.
inline void sgd_update(Model& m, const ModelParams& grad, const TrainConfig& cfg) {
    std::vector<Tensor*> targets;
    m.params.for_each_block([&](const std::string& name, Tensor& t) {
        targets.push_back((cfg.freeze_extractor && name.rfind("phi.", 0) == 0) ? nullptr : &t);
    });
    double scale = cfg.learning_rate;
    if (cfg.grad_clip) {
        const double norm = global_norm(grad);
        if (norm > *cfg.grad_clip) scale *= *cfg.grad_clip / norm;
    }
    std::size_t k = 0;
    grad.for_each_block([&](const std::string&, const Tensor& g) {
        if (Tensor* t = targets[k++]) axpy(-scale, g, *t);
    });
}

/// A random clip_length window of a classification sequence.
inline Example crop_clip(const Example& ex, std::size_t clip_length, Rng& rng) {
    if (ex.inputs.size() <= clip_length) return ex;
    const std::size_t start = rng.index(ex.inputs.size() - clip_length + 1);
    Example out;
    out.inputs.assign(ex.inputs.begin() + static_cast<std::ptrdiff_t>(start),
                      ex.inputs.begin() + static_cast<std::ptrdiff_t>(start + clip_length));
    out.labels = ex.labels;
    return out;
}

/**
 * One pass of minibatch SGD over `data`. Shuffling, clip cropping and
 * dropout masks are all drawn from `rng`, so a fixed seed fixes the whole
 * parameter trajectory.
 */
inline LossReport train_epoch(Model& m, const std::vector<Example>& data, const TrainConfig& cfg,
                              Rng& rng) {
    if (data.empty()) throw DomainError("train_epoch: empty dataset");
    cfg.validate();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    LossReport epoch;
    std::vector<Example> cropped;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::vector<const Example*> batch;
        cropped.clear();
        cropped.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) {
            const Example& ex = data[order[k]];
            if (m.spec.task == Task::classify && ex.inputs.size() > cfg.clip_length) {
                cropped.push_back(crop_clip(ex, cfg.clip_length, rng));
                batch.push_back(&cropped.back());
            } else {
                batch.push_back(&ex);
            }
        }
        LossAndGrad lg = loss_and_grad(m, batch, cfg.dropout, &rng);
        check_finite(lg.grad, lg.loss);
        sgd_update(m, lg.grad, cfg);
        epoch.mean_nll += lg.loss.mean_nll * static_cast<double>(lg.loss.sequences);
        epoch.sequences += lg.loss.sequences;
        epoch.targets += lg.loss.targets;
        if (epoch.per_step.size() < lg.loss.per_step.size())
            epoch.per_step.resize(lg.loss.per_step.size(), 0.0);
        for (std::size_t t = 0; t < lg.loss.per_step.size(); ++t)
            epoch.per_step[t] += lg.loss.per_step[t] * static_cast<double>(lg.loss.sequences);
    }
    finish(epoch);
    return epoch;
}

// ---------------------------------------------------------------------------
// Gradient check

struct BlockCheck {
    std::string name;
    std::size_t size = 0;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;  // over elements whose absolute error exceeds the floor
    bool passed = true;
};

struct GradCheckReport {
    std::vector<BlockCheck> blocks;
    bool passed = true;

    const BlockCheck* find(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.name == name) return &b;
        return nullptr;
    }
};

/**
 * Compares the analytic gradient of mean sequence NLL against central
 * finite differences, element by element. An element passes when its
 * absolute error is within `abs_floor` or its relative error
 * |a - n| / max(|a|, |n|) is within `tol`. `tamper` may modify the analytic
 * gradient before comparison (fault injection).
 */
inline GradCheckReport gradient_check(const Model& model, const std::vector<Example>& batch,
                                      double eps = 1e-5, double tol = 1e-4,
                                      double abs_floor = 1e-7,
                                      const std::function<void(ModelParams&)>& tamper = {}) {
    ModelParams analytic = loss_and_grad(model, batch).grad;
    if (tamper) tamper(analytic);
    Model probe = model;
    std::vector<std::pair<std::string, Tensor*>> blocks;
    probe.params.for_each_block([&](const std::string& n, Tensor& t) { blocks.emplace_back(n, &t); });
    std::vector<const Tensor*> grads;
    analytic.for_each_block([&](const std::string&, const Tensor& t) { grads.push_back(&t); });

    GradCheckReport report;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        auto& [name, tensor] = blocks[b];
        if (tensor->empty()) continue;
        BlockCheck check{name, tensor->size()};
        for (std::size_t i = 0; i < tensor->size(); ++i) {
            const double orig = (*tensor)[i];
            (*tensor)[i] = orig + eps;
            const double up = sequence_nll(probe, batch).mean_nll;
            (*tensor)[i] = orig - eps;
            const double down = sequence_nll(probe, batch).mean_nll;
            (*tensor)[i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = (*grads[b])[i];
            const double err = std::abs(a - numeric);
            check.max_abs_err = std::max(check.max_abs_err, err);
            if (!(err <= abs_floor)) {
                const double rel = err / std::max(std::abs(a), std::abs(numeric));
                check.max_rel_err = std::max(check.max_rel_err, rel);
                if (!(rel <= tol)) check.passed = false;
            }
        }
        report.passed = report.passed && check.passed;
        report.blocks.push_back(std::move(check));
    }
    return report;
}

}  // namespace lrcn
