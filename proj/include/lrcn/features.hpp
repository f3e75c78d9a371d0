#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "lrcn/random.hpp"
#include "lrcn/tensor.hpp"

namespace lrcn {

enum class ExtractorKind { identity, linear, mlp1, smallconv };

inline std::string_view to_string(ExtractorKind k) {
    switch (k) {
        case ExtractorKind::identity: return "identity";
        case ExtractorKind::linear: return "linear";
        case ExtractorKind::mlp1: return "mlp1";
        case ExtractorKind::smallconv: return "smallconv";
    }
    return "?";
}

inline ExtractorKind extractor_kind_from(std::string_view s) {
    if (s == "identity") return ExtractorKind::identity;
    if (s == "linear") return ExtractorKind::linear;
    if (s == "mlp1") return ExtractorKind::mlp1;
    if (s == "smallconv") return ExtractorKind::smallconv;
    throw std::invalid_argument("unknown extractor kind '" + std::string(s) + "'");
}

/**
 * Topology of the per-frame visual transform.
 *
 *  - identity:  flatten(x)
 *  - linear:    W x + b
 *  - mlp1:      W2 tanh(W1 x + b1) + b2
 *  - smallconv: x is C x H x W; F filters of k x k, stride 1, valid padding,
 *               then 2x2 max-pool (floor), then a linear head.
 */
struct FeatureExtractorSpec {
    ExtractorKind kind = ExtractorKind::identity;
    Shape input_shape;
    std::size_t output_dim = 0;  // ignored for identity
    std::size_t hidden = 16;     // mlp1
    std::size_t filters = 4;     // smallconv
    std::size_t kernel = 3;      // smallconv

    std::size_t input_size() const { return shape_size(input_shape); }

    std::size_t out_dim() const {
        return kind == ExtractorKind::identity ? input_size() : output_dim;
    }

    // smallconv geometry
    std::size_t conv_h() const { return input_shape.at(1) - kernel + 1; }
    std::size_t conv_w() const { return input_shape.at(2) - kernel + 1; }
    std::size_t pool_h() const { return conv_h() / 2; }
    std::size_t pool_w() const { return conv_w() / 2; }

    void validate() const {
        if (input_shape.empty()) throw DimensionError("extractor input shape is empty");
        for (std::size_t e : input_shape)
            if (e == 0) throw DimensionError("extractor input shape has a zero extent");
        if (kind != ExtractorKind::identity && output_dim == 0)
            throw DimensionError("extractor output dimension must be positive");
        if (kind == ExtractorKind::mlp1 && hidden == 0)
            throw DimensionError("mlp1 hidden size must be positive");
        if (kind == ExtractorKind::smallconv) {
            if (input_shape.size() != 3)
                throw DimensionError("smallconv expects a C x H x W input, got " +
                                     shape_str(input_shape));
            if (filters == 0 || kernel == 0 || input_shape[1] < kernel + 1 ||
                input_shape[2] < kernel + 1)
                throw DimensionError("smallconv input " + shape_str(input_shape) +
                                     " too small for kernel " + std::to_string(kernel) +
                                     " and 2x2 pooling");
        }
    }

    bool operator==(const FeatureExtractorSpec&) const = default;
};

/// Parameters V, laid out per kind (empty for identity).
struct FeatureExtractor {
    FeatureExtractorSpec spec;
    // linear: W, b.  mlp1: W, b (first layer), W2, b2.  smallconv: K, kb, W, b.
    Tensor W, b, W2, b2, K, kb;

    static FeatureExtractor zeros(const FeatureExtractorSpec& spec) {
        spec.validate();
        FeatureExtractor e{spec, {}, {}, {}, {}, {}, {}};
        const std::size_t in = spec.input_size(), out = spec.out_dim();
        switch (spec.kind) {
            case ExtractorKind::identity: break;
            case ExtractorKind::linear:
                e.W = Tensor({out, in});
                e.b = Tensor({out});
                break;
            case ExtractorKind::mlp1:
                e.W = Tensor({spec.hidden, in});
                e.b = Tensor({spec.hidden});
                e.W2 = Tensor({out, spec.hidden});
                e.b2 = Tensor({out});
                break;
            case ExtractorKind::smallconv: {
                const std::size_t c = spec.input_shape[0];
                e.K = Tensor({spec.filters, c, spec.kernel, spec.kernel});
                e.kb = Tensor({spec.filters});
                e.W = Tensor({out, spec.filters * spec.pool_h() * spec.pool_w()});
                e.b = Tensor({out});
                break;
            }
        }
        return e;
    }

    template <class F>
    void for_each_block(F&& f) {
        for (auto [name, t] : {std::pair<std::string_view, Tensor*>{"K", &K},
                               {"kb", &kb}, {"W", &W}, {"b", &b}, {"W2", &W2}, {"b2", &b2}})
            if (!t->empty()) f(name, *t);
    }
    template <class F>
    void for_each_block(F&& f) const {
        const_cast<FeatureExtractor*>(this)->for_each_block(
            [&](std::string_view name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
    }

    void init_uniform(Rng& rng) {
        for_each_block([&](std::string_view name, Tensor& t) {
            if (name[0] == 'b' || name == "kb") {
                t.fill(0.0);
                return;
            }
            const std::size_t fan_in = t.size() / t.dim(0);
            const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : t.values()) v = rng.uniform(-s, s);
        });
    }
};

struct FeatureCache {
    Tensor x;       // flattened input
    Tensor hidden;  // mlp1: tanh activations
    Tensor conv;    // smallconv: F x Hc x Wc pre-pool responses
    std::vector<std::size_t> argmax;  // smallconv: flat conv index per pooled cell
    Tensor pooled;  // smallconv: flattened pooled map
};

struct FeatureOutput {
    Tensor out;
    FeatureCache cache;
};

/// phi_V(x): a fixed-length vector that depends on x alone.
inline FeatureOutput phi_forward(const FeatureExtractor& e, const Tensor& x) {
    const auto& spec = e.spec;
    if (x.size() != spec.input_size() ||
        (x.rank() > 1 && x.shape() != spec.input_shape))
        throw DimensionError("phi_forward: input " + shape_str(x.shape()) + " does not match " +
                             shape_str(spec.input_shape));
    FeatureOutput r;
    r.cache.x = x.flattened();
    const Tensor& xf = r.cache.x;
    switch (spec.kind) {
        case ExtractorKind::identity:
            r.out = xf;
            break;
        case ExtractorKind::linear:
            r.out = e.b;
            matvec_acc(e.W, xf.values(), r.out.values());
            break;
        case ExtractorKind::mlp1: {
            Tensor a = e.b;
            matvec_acc(e.W, xf.values(), a.values());
            r.cache.hidden = tanh_act(a);
            r.out = e.b2;
            matvec_acc(e.W2, r.cache.hidden.values(), r.out.values());
            break;
        }
        case ExtractorKind::smallconv: {
            const std::size_t C = spec.input_shape[0], H = spec.input_shape[1],
                              W = spec.input_shape[2], k = spec.kernel, F = spec.filters;
            const std::size_t Hc = spec.conv_h(), Wc = spec.conv_w();
            const std::size_t Hp = spec.pool_h(), Wp = spec.pool_w();
            Tensor conv({F, Hc, Wc});
            for (std::size_t f = 0; f < F; ++f)
                for (std::size_t i = 0; i < Hc; ++i)
                    for (std::size_t j = 0; j < Wc; ++j) {
                        double s = e.kb[f];
                        for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t di = 0; di < k; ++di)
                                for (std::size_t dj = 0; dj < k; ++dj)
                                    s += e.K[((f * C + c) * k + di) * k + dj] *
                                         xf[(c * H + i + di) * W + j + dj];
                        conv[(f * Hc + i) * Wc + j] = s;
                    }
            Tensor pooled({F * Hp * Wp});
            std::vector<std::size_t> arg(F * Hp * Wp);
            for (std::size_t f = 0; f < F; ++f)
                for (std::size_t i = 0; i < Hp; ++i)
                    for (std::size_t j = 0; j < Wp; ++j) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t best_idx = 0;
                        for (std::size_t di = 0; di < 2; ++di)
                            for (std::size_t dj = 0; dj < 2; ++dj) {
                                const std::size_t idx = (f * Hc + 2 * i + di) * Wc + 2 * j + dj;
                                if (conv[idx] > best) {
                                    best = conv[idx];
                                    best_idx = idx;
                                }
                            }
                        const std::size_t p = (f * Hp + i) * Wp + j;
                        pooled[p] = best;
                        arg[p] = best_idx;
                    }
            r.out = e.b;
            matvec_acc(e.W, pooled.values(), r.out.values());
            r.cache.conv = std::move(conv);
            r.cache.pooled = std::move(pooled);
            r.cache.argmax = std::move(arg);
            break;
        }
    }
    return r;
}

/// Accumulates dL/dV into `grads` and returns dL/dx (flattened).
inline Tensor phi_backward(const FeatureExtractor& e, const FeatureCache& cache,
                           const Tensor& grad_out, FeatureExtractor& grads) {
    const auto& spec = e.spec;
    if (cache.x.empty()) throw std::invalid_argument("phi_backward: missing forward cache");
    if (grad_out.size() != spec.out_dim()) throw DimensionError("phi_backward: grad size mismatch");
    Tensor dx({spec.input_size()});
    switch (spec.kind) {
        case ExtractorKind::identity:
            dx = grad_out.flattened();
            break;
        case ExtractorKind::linear:
            outer_acc(grads.W, grad_out.values(), cache.x.values());
            add_inplace(grads.b.values(), grad_out.values());
            matvec_t_acc(e.W, grad_out.values(), dx.values());
            break;
        case ExtractorKind::mlp1: {
            outer_acc(grads.W2, grad_out.values(), cache.hidden.values());
            add_inplace(grads.b2.values(), grad_out.values());
            Tensor da({spec.hidden});
            matvec_t_acc(e.W2, grad_out.values(), da.values());
            for (std::size_t k = 0; k < da.size(); ++k)
                da[k] *= 1.0 - cache.hidden[k] * cache.hidden[k];
            outer_acc(grads.W, da.values(), cache.x.values());
            add_inplace(grads.b.values(), da.values());
            matvec_t_acc(e.W, da.values(), dx.values());
            break;
        }
        case ExtractorKind::smallconv: {
            outer_acc(grads.W, grad_out.values(), cache.pooled.values());
            add_inplace(grads.b.values(), grad_out.values());
            Tensor dpool({cache.pooled.size()});
            matvec_t_acc(e.W, grad_out.values(), dpool.values());
            Tensor dconv = zeros_like(cache.conv);
            for (std::size_t p = 0; p < dpool.size(); ++p) dconv[cache.argmax[p]] += dpool[p];
            const std::size_t C = spec.input_shape[0], H = spec.input_shape[1],
                              W = spec.input_shape[2], k = spec.kernel, F = spec.filters;
            const std::size_t Hc = spec.conv_h(), Wc = spec.conv_w();
            for (std::size_t f = 0; f < F; ++f)
                for (std::size_t i = 0; i < Hc; ++i)
                    for (std::size_t j = 0; j < Wc; ++j) {
                        const double g = dconv[(f * Hc + i) * Wc + j];
                        if (g == 0.0) continue;
                        grads.kb[f] += g;
                        for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t di = 0; di < k; ++di)
                                for (std::size_t dj = 0; dj < k; ++dj) {
                                    const std::size_t ki = ((f * C + c) * k + di) * k + dj;
                                    const std::size_t xi = (c * H + i + di) * W + j + dj;
                                    grads.K[ki] += g * cache.x[xi];
                                    dx[xi] += g * e.K[ki];
                                }
                    }
            break;
        }
    }
    return dx;
}

}  // namespace lrcn
