#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lrcn/random.hpp"
#include "lrcn/tensor.hpp"

namespace lrcn {

enum class Nonlinearity { sigmoid, tanh };

inline double apply(Nonlinearity g, double x) {
    return g == Nonlinearity::sigmoid ? sigmoid(x) : std::tanh(x);
}

/// g'(a) written in terms of the output y = g(a).
inline double derivative_from_output(Nonlinearity g, double y) {
    return g == Nonlinearity::sigmoid ? y * (1.0 - y) : 1.0 - y * y;
}

// ---------------------------------------------------------------------------
// Parameters

/// h_t = g(W_xh x_t + W_hh h_{t-1} + b_h)
struct RnnCellParams {
    Tensor W_xh, W_hh, b_h;
    Nonlinearity g = Nonlinearity::tanh;

    static RnnCellParams zeros(std::size_t hidden, std::size_t input,
                               Nonlinearity g = Nonlinearity::tanh) {
        return {Tensor({hidden, input}), Tensor({hidden, hidden}), Tensor({hidden}), g};
    }

    std::size_t hidden_size() const { return b_h.size(); }
    std::size_t input_size() const { return W_xh.dim(1); }

    template <class F>
    void for_each_block(F&& f) {
        f(std::string_view("W_xh"), W_xh);
        f(std::string_view("W_hh"), W_hh);
        f(std::string_view("b_h"), b_h);
    }
    template <class F>
    void for_each_block(F&& f) const {
        f(std::string_view("W_xh"), W_xh);
        f(std::string_view("W_hh"), W_hh);
        f(std::string_view("b_h"), b_h);
    }
};

/// One (input matrix, hidden matrix, bias) triple per gate.
struct LstmCellParams {
    Tensor W_xi, W_hi, b_i;
    Tensor W_xf, W_hf, b_f;
    Tensor W_xo, W_ho, b_o;
    Tensor W_xc, W_hc, b_c;

    static LstmCellParams zeros(std::size_t hidden, std::size_t input) {
        LstmCellParams p;
        p.for_each_block([&](std::string_view name, Tensor& t) {
            if (name[0] == 'b')
                t = Tensor({hidden});
            else if (name[2] == 'x')
                t = Tensor({hidden, input});
            else
                t = Tensor({hidden, hidden});
        });
        return p;
    }

    std::size_t hidden_size() const { return b_i.size(); }
    std::size_t input_size() const { return W_xi.dim(1); }

    template <class F>
    void for_each_block(F&& f) {
        f(std::string_view("W_xi"), W_xi);
        f(std::string_view("W_hi"), W_hi);
        f(std::string_view("b_i"), b_i);
        f(std::string_view("W_xf"), W_xf);
        f(std::string_view("W_hf"), W_hf);
        f(std::string_view("b_f"), b_f);
        f(std::string_view("W_xo"), W_xo);
        f(std::string_view("W_ho"), W_ho);
        f(std::string_view("b_o"), b_o);
        f(std::string_view("W_xc"), W_xc);
        f(std::string_view("W_hc"), W_hc);
        f(std::string_view("b_c"), b_c);
    }
    template <class F>
    void for_each_block(F&& f) const {
        const_cast<LstmCellParams*>(this)->for_each_block(
            [&](std::string_view name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
    }
};

using CellParams = std::variant<RnnCellParams, LstmCellParams>;

inline std::size_t hidden_size(const CellParams& p) {
    return std::visit([](const auto& c) { return c.hidden_size(); }, p);
}

inline std::size_t input_size(const CellParams& p) {
    return std::visit([](const auto& c) { return c.input_size(); }, p);
}

inline bool is_lstm(const CellParams& p) { return std::holds_alternative<LstmCellParams>(p); }

template <class F>
void for_each_block(CellParams& p, F&& f) {
    std::visit([&](auto& c) { c.for_each_block(f); }, p);
}
template <class F>
void for_each_block(const CellParams& p, F&& f) {
    std::visit([&](const auto& c) { c.for_each_block(f); }, p);
}

/// Same cell type and shapes, all zeros. Used as a gradient accumulator.
inline CellParams zeros_like(const CellParams& p) {
    CellParams out = p;
    for_each_block(out, [](std::string_view, Tensor& t) { t.fill(0.0); });
    return out;
}

/**
 * Uniform init in [-s, s] with s = 1/sqrt(fan_in), where fan_in counts both
 * the input and the recurrent connections. Biases are zero except the LSTM
 * forget-gate bias, which starts at +1.
 */
inline void init_uniform(CellParams& p, Rng& rng) {
    const double fan_in = static_cast<double>(input_size(p) + hidden_size(p));
    const double s = 1.0 / std::sqrt(fan_in);
    for_each_block(p, [&](std::string_view name, Tensor& t) {
        if (name[0] == 'b') {
            t.fill(name == "b_f" ? 1.0 : 0.0);
        } else {
            for (double& v : t.values()) v = rng.uniform(-s, s);
        }
    });
}

// ---------------------------------------------------------------------------
// State

struct LayerState {
    Tensor h;
    Tensor c;  // null for RNN layers

    bool operator==(const LayerState&) const = default;
};

struct RecurrentState {
    std::vector<LayerState> layers;

    static RecurrentState zeros(const std::vector<CellParams>& stack) {
        RecurrentState s;
        for (const auto& p : stack) {
            const std::size_t n = hidden_size(p);
            s.layers.push_back({Tensor({n}), is_lstm(p) ? Tensor({n}) : Tensor{}});
        }
        return s;
    }

    std::size_t depth() const { return layers.size(); }
    const Tensor& top_h() const { return layers.back().h; }
    bool operator==(const RecurrentState&) const = default;
};

inline void check_state(const std::vector<CellParams>& stack, const RecurrentState& s) {
    if (s.depth() != stack.size())
        throw DimensionError("recurrent state has " + std::to_string(s.depth()) +
                             " layers, stack has " + std::to_string(stack.size()));
    for (std::size_t l = 0; l < stack.size(); ++l) {
        const std::size_t n = hidden_size(stack[l]);
        if (s.layers[l].h.size() != n || (is_lstm(stack[l]) && s.layers[l].c.size() != n))
            throw DimensionError("recurrent state layer " + std::to_string(l) +
                                 " does not match hidden size " + std::to_string(n));
    }
}

// ---------------------------------------------------------------------------
// RNN step

/// Forward result of one RNN step; doubles as the backward cache.
struct RnnStep {
    Tensor h;
    Tensor x, h_prev;
};

inline RnnStep rnn_step(const RnnCellParams& p, const Tensor& x, const Tensor& h_prev) {
    const std::size_t n = p.hidden_size();
    if (x.size() != p.input_size() || h_prev.size() != n)
        throw DimensionError("rnn_step: input " + shape_str(x.shape()) + ", state " +
                             shape_str(h_prev.shape()) + " for cell with W_xh " +
                             shape_str(p.W_xh.shape()));
    Tensor a = p.b_h;
    matvec_acc(p.W_xh, x.values(), a.values());
    matvec_acc(p.W_hh, h_prev.values(), a.values());
    for (double& v : a.values()) v = apply(p.g, v);
    return {std::move(a), x.flattened(), h_prev.flattened()};
}

struct RnnStepGrads {
    Tensor x, h_prev;
};

inline RnnStepGrads rnn_step_backward(const RnnCellParams& p, const RnnStep& cache,
                                      const Tensor& grad_h, RnnCellParams& grads) {
    if (cache.h.empty()) throw std::invalid_argument("rnn_step_backward: missing forward cache");
    const std::size_t n = p.hidden_size();
    if (grad_h.size() != n) throw DimensionError("rnn_step_backward: grad_h size mismatch");
    Tensor da({n});
    for (std::size_t k = 0; k < n; ++k) da[k] = grad_h[k] * derivative_from_output(p.g, cache.h[k]);
    outer_acc(grads.W_xh, da.values(), cache.x.values());
    outer_acc(grads.W_hh, da.values(), cache.h_prev.values());
    add_inplace(grads.b_h.values(), da.values());
    RnnStepGrads out{Tensor({p.input_size()}), Tensor({n})};
    matvec_t_acc(p.W_xh, da.values(), out.x.values());
    matvec_t_acc(p.W_hh, da.values(), out.h_prev.values());
    return out;
}

// ---------------------------------------------------------------------------
// LSTM step

struct GateActivations {
    Tensor i, f, o, g;
};

/// Forward result of one LSTM step; doubles as the backward cache.
struct LstmStep {
    Tensor h, c;
    GateActivations gates;
    Tensor tanh_c;
    Tensor x, h_prev, c_prev;
};

inline LstmStep lstm_step(const LstmCellParams& p, const Tensor& x, const Tensor& h_prev,
                          const Tensor& c_prev) {
    const std::size_t n = p.hidden_size();
    if (x.size() != p.input_size() || h_prev.size() != n || c_prev.size() != n)
        throw DimensionError("lstm_step: input " + shape_str(x.shape()) + ", state " +
                             shape_str(h_prev.shape()) + "/" + shape_str(c_prev.shape()) +
                             " for cell with W_xi " + shape_str(p.W_xi.shape()));
    auto preact = [&](const Tensor& wx, const Tensor& wh, const Tensor& b) {
        Tensor a = b;
        matvec_acc(wx, x.values(), a.values());
        matvec_acc(wh, h_prev.values(), a.values());
        return a;
    };
    LstmStep s;
    s.gates.i = sigmoid(preact(p.W_xi, p.W_hi, p.b_i));
    s.gates.f = sigmoid(preact(p.W_xf, p.W_hf, p.b_f));
    s.gates.o = sigmoid(preact(p.W_xo, p.W_ho, p.b_o));
    s.gates.g = tanh_act(preact(p.W_xc, p.W_hc, p.b_c));
    s.c = Tensor({n});
    s.tanh_c = Tensor({n});
    s.h = Tensor({n});
    for (std::size_t k = 0; k < n; ++k) {
        s.c[k] = s.gates.f[k] * c_prev[k] + s.gates.i[k] * s.gates.g[k];
        s.tanh_c[k] = std::tanh(s.c[k]);
        s.h[k] = s.gates.o[k] * s.tanh_c[k];
    }
    s.x = x.flattened();
    s.h_prev = h_prev.flattened();
    s.c_prev = c_prev.flattened();
    return s;
}

struct LstmStepGrads {
    Tensor x, h_prev, c_prev;
};

/**
 * Reverse-mode pass through one LSTM step. `grad_h`/`grad_c` are the
 * derivatives of the loss with respect to this step's outputs; parameter
 * gradients are accumulated into `grads`.
 */
inline LstmStepGrads lstm_step_backward(const LstmCellParams& p, const LstmStep& cache,
                                        const Tensor& grad_h, const Tensor& grad_c,
                                        LstmCellParams& grads) {
    if (cache.h.empty()) throw std::invalid_argument("lstm_step_backward: missing forward cache");
    const std::size_t n = p.hidden_size();
    if (grad_h.size() != n || grad_c.size() != n)
        throw DimensionError("lstm_step_backward: upstream gradient size mismatch");
    const auto& [i, f, o, g] = cache.gates;
    Tensor da_i({n}), da_f({n}), da_o({n}), da_c({n});
    LstmStepGrads out{Tensor({p.input_size()}), Tensor({n}), Tensor({n})};
    for (std::size_t k = 0; k < n; ++k) {
        const double tc = cache.tanh_c[k];
        const double dc = grad_c[k] + grad_h[k] * o[k] * (1.0 - tc * tc);
        da_o[k] = grad_h[k] * tc * o[k] * (1.0 - o[k]);
        da_i[k] = dc * g[k] * i[k] * (1.0 - i[k]);
        da_f[k] = dc * cache.c_prev[k] * f[k] * (1.0 - f[k]);
        da_c[k] = dc * i[k] * (1.0 - g[k] * g[k]);
        out.c_prev[k] = dc * f[k];
    }
    auto gate = [&](const Tensor& da, const Tensor& wx, const Tensor& wh, Tensor& gwx, Tensor& gwh,
                    Tensor& gb) {
        outer_acc(gwx, da.values(), cache.x.values());
        outer_acc(gwh, da.values(), cache.h_prev.values());
        add_inplace(gb.values(), da.values());
        matvec_t_acc(wx, da.values(), out.x.values());
        matvec_t_acc(wh, da.values(), out.h_prev.values());
    };
    gate(da_i, p.W_xi, p.W_hi, grads.W_xi, grads.W_hi, grads.b_i);
    gate(da_f, p.W_xf, p.W_hf, grads.W_xf, grads.W_hf, grads.b_f);
    gate(da_o, p.W_xo, p.W_ho, grads.W_xo, grads.W_ho, grads.b_o);
    gate(da_c, p.W_xc, p.W_hc, grads.W_xc, grads.W_hc, grads.b_c);
    return out;
}

// ---------------------------------------------------------------------------
// Stacking

using CellCache = std::variant<RnnStep, LstmStep>;

/// A vector concatenated onto one layer's input: [layer input || vec].
struct Injection {
    const Tensor* vec = nullptr;
    std::size_t layer = 0;  // 0-based
};

/// One time step through every layer of a stack.
struct StackStep {
    std::vector<CellCache> cells;
    std::vector<Tensor> masks;  // per-layer input dropout multipliers; null if none
    std::size_t bottom_size = 0;
    std::optional<std::size_t> side_layer;  // layer that received an injected vector
    std::size_t side_size = 0;
    RecurrentState state;  // state after this step
};

inline void check_stack(const std::vector<CellParams>& stack, std::size_t bottom_size,
                        const Injection& inj) {
    if (stack.empty()) throw DimensionError("recurrent stack has no layers");
    const std::size_t side = inj.vec ? inj.vec->size() : 0;
    for (std::size_t l = 0; l < stack.size(); ++l) {
        std::size_t expected = l == 0 ? bottom_size : hidden_size(stack[l - 1]);
        if (inj.vec && inj.layer == l) expected += side;
        if (input_size(stack[l]) != expected)
            throw DimensionError("layer " + std::to_string(l) + " expects input of size " +
                                 std::to_string(input_size(stack[l])) + " but receives " +
                                 std::to_string(expected));
    }
}

/**
 * Runs one time step bottom to top. Layer l > 0 consumes h of layer l-1;
 * `inj` optionally appends a vector to one layer's input. When `masks` is
 * given, masks[l] (if non-null) multiplies layer l's full input.
 */
inline StackStep stack_step(const std::vector<CellParams>& stack, const Tensor& bottom,
                            const RecurrentState& prev, Injection inj = {},
                            const std::vector<Tensor>* masks = nullptr) {
    check_stack(stack, bottom.size(), inj);
    check_state(stack, prev);
    StackStep out;
    out.bottom_size = bottom.size();
    if (inj.vec) {
        out.side_layer = inj.layer;
        out.side_size = inj.vec->size();
    }
    out.cells.reserve(stack.size());
    out.state.layers.resize(stack.size());
    if (masks) out.masks = *masks;
    const Tensor* below = &bottom;
    for (std::size_t l = 0; l < stack.size(); ++l) {
        Tensor x = (inj.vec && inj.layer == l) ? concat(*below, *inj.vec) : below->flattened();
        if (masks && l < masks->size() && !(*masks)[l].empty()) {
            const Tensor& m = (*masks)[l];
            if (m.size() != x.size()) throw DimensionError("dropout mask size mismatch");
            for (std::size_t k = 0; k < x.size(); ++k) x[k] *= m[k];
        }
        if (const auto* lp = std::get_if<LstmCellParams>(&stack[l])) {
            LstmStep s = lstm_step(*lp, x, prev.layers[l].h, prev.layers[l].c);
            out.state.layers[l] = {s.h, s.c};
            out.cells.emplace_back(std::move(s));
        } else {
            RnnStep s = rnn_step(std::get<RnnCellParams>(stack[l]), x, prev.layers[l].h);
            out.state.layers[l] = {s.h, Tensor{}};
            out.cells.emplace_back(std::move(s));
        }
        below = &out.state.layers[l].h;
    }
    return out;
}

struct StackInputGrads {
    Tensor bottom;
    Tensor side;  // gradient w.r.t. the injected vector (null without injection)
};

/**
 * Backward through one StackStep.
 *
 * `carry` holds dL/d(state after this step) on entry (excluding the
 * contribution through `grad_top_h`) and dL/d(state before this step) on
 * exit. Parameter gradients accumulate into `grads`.
 */
inline StackInputGrads stack_step_backward(const std::vector<CellParams>& stack,
                                           const StackStep& step, const Tensor& grad_top_h,
                                           RecurrentState& carry, std::vector<CellParams>& grads) {
    const std::size_t depth = stack.size();
    if (step.cells.size() != depth) throw std::invalid_argument("stack_step_backward: missing cache");
    check_state(stack, carry);
    StackInputGrads out;
    Tensor dh_from_above = grad_top_h.empty() ? Tensor({hidden_size(stack.back())}) : grad_top_h;
    for (std::size_t l = depth; l-- > 0;) {
        Tensor dh = carry.layers[l].h;
        add_inplace(dh.values(), dh_from_above.values());
        Tensor dx;
        if (const auto* lp = std::get_if<LstmCellParams>(&stack[l])) {
            auto g = lstm_step_backward(*lp, std::get<LstmStep>(step.cells[l]), dh,
                                        carry.layers[l].c, std::get<LstmCellParams>(grads[l]));
            carry.layers[l] = {std::move(g.h_prev), std::move(g.c_prev)};
            dx = std::move(g.x);
        } else {
            auto g = rnn_step_backward(std::get<RnnCellParams>(stack[l]),
                                       std::get<RnnStep>(step.cells[l]), dh,
                                       std::get<RnnCellParams>(grads[l]));
            carry.layers[l] = {std::move(g.h_prev), Tensor{}};
            dx = std::move(g.x);
        }
        if (l < step.masks.size() && !step.masks[l].empty())
            for (std::size_t k = 0; k < dx.size(); ++k) dx[k] *= step.masks[l][k];
        const std::size_t own = l == 0 ? step.bottom_size : hidden_size(stack[l - 1]);
        if (step.side_layer == l) {
            out.side = Tensor({step.side_size});
            for (std::size_t k = 0; k < step.side_size; ++k) out.side[k] = dx[own + k];
        }
        if (l == 0) {
            if (own > 0) {
                out.bottom = Tensor({own});
                for (std::size_t k = 0; k < own; ++k) out.bottom[k] = dx[k];
            }
        } else {
            dh_from_above = Tensor({own});
            for (std::size_t k = 0; k < own; ++k) dh_from_above[k] = dx[k];
        }
    }
    return out;
}

/// Full unrolled forward of a plain stack over a sequence.
struct StackTrace {
    std::vector<std::vector<Tensor>> h;  // h[layer][t]
    RecurrentState final_state;
    std::vector<StackStep> steps;
};

inline StackTrace stack_forward(const std::vector<CellParams>& stack,
                                const std::vector<Tensor>& inputs,
                                std::optional<RecurrentState> initial = std::nullopt) {
    for (std::size_t l = 1; l < stack.size(); ++l)
        if (input_size(stack[l]) != hidden_size(stack[l - 1]))
            throw DimensionError("layer " + std::to_string(l) + " input size " +
                                 std::to_string(input_size(stack[l])) +
                                 " does not match hidden size " +
                                 std::to_string(hidden_size(stack[l - 1])) + " of the layer below");
    StackTrace trace;
    trace.h.resize(stack.size());
    RecurrentState state = initial ? std::move(*initial) : RecurrentState::zeros(stack);
    for (const Tensor& x : inputs) {
        StackStep s = stack_step(stack, x, state);
        for (std::size_t l = 0; l < stack.size(); ++l) trace.h[l].push_back(s.state.layers[l].h);
        state = s.state;
        trace.steps.push_back(std::move(s));
    }
    trace.final_state = std::move(state);
    return trace;
}

struct StackGrads {
    std::vector<Tensor> inputs;   // dL/dx_t
    RecurrentState initial;       // dL/d(initial state)
};

/// BPTT through a StackTrace given dL/dh_top at every step.
inline StackGrads stack_backward(const std::vector<CellParams>& stack, const StackTrace& trace,
                                 const std::vector<Tensor>& grad_top_h,
                                 std::vector<CellParams>& grads,
                                 std::optional<RecurrentState> grad_final = std::nullopt) {
    if (grad_top_h.size() != trace.steps.size())
        throw DimensionError("stack_backward: one top gradient per step required");
    RecurrentState carry = grad_final ? std::move(*grad_final) : RecurrentState::zeros(stack);
    StackGrads out;
    out.inputs.resize(trace.steps.size());
    for (std::size_t t = trace.steps.size(); t-- > 0;)
        out.inputs[t] = stack_step_backward(stack, trace.steps[t], grad_top_h[t], carry, grads).bottom;
    out.initial = std::move(carry);
    return out;
}

}  // namespace lrcn
