#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uxmil/ops.hpp"
#include "uxmil/params.hpp"

namespace uxmil {

enum class Positional { none, learned };

struct TransformerEncoderConfig {
    std::size_t model_dim = 128;
    std::size_t num_heads = 4;
    std::size_t num_layers = 2;
    std::size_t feedforward_dim = 256;
    double dropout_rate = 0.1;
    Positional positional_encoding = Positional::learned;

    void validate() const {
        if (model_dim == 0 || num_heads == 0 || feedforward_dim == 0)
            throw ConfigError("transformer config: dims must be positive");
        if (model_dim % num_heads != 0)
            throw ConfigError("transformer config: model_dim " + std::to_string(model_dim) +
                              " not divisible by num_heads " + std::to_string(num_heads));
        if (dropout_rate < 0.0 || dropout_rate > 1.0)
            throw ConfigError("transformer config: dropout_rate outside [0,1]");
    }
};

// Everything a forward pass needs besides weights. tape == nullptr disables
// gradient recording; rng is only consulted when training (dropout).
template <class S>
struct ForwardCtx {
    Tape<S>* tape = nullptr;
    bool training = false;
    Rng* rng = nullptr;
};

template <class S>
struct LinearWeights {
    Tensor<S> w;  // [in, out]
    Tensor<S> b;  // [out]

    void init(std::size_t in, std::size_t out, Rng& rng) {
        w = Tensor<S>::randn(Shape{in, out}, rng, std::sqrt(2.0 / static_cast<double>(in)));
        b = Tensor<S>(Shape{out});
    }
    void collect(const std::string& prefix, ParamList<S>& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
    Tensor<S> apply(ForwardCtx<S>& ctx, const Tensor<S>& x) const {
        return add_broadcast(ctx.tape, linear_apply(ctx.tape, x, w), b);
    }
};

template <class S>
struct LayerNormWeights {
    Tensor<S> gamma, beta;
    void init(std::size_t d) {
        gamma = Tensor<S>(Shape{d}, S(1));
        beta = Tensor<S>(Shape{d});
    }
    void collect(const std::string& prefix, ParamList<S>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

template <class S>
struct TransformerLayerWeights {
    LinearWeights<S> q, k, v, o;
    LinearWeights<S> ff1, ff2;
    LayerNormWeights<S> ln_attn, ln_ff;

    void init(const TransformerEncoderConfig& cfg, Rng& rng) {
        const std::size_t d = cfg.model_dim;
        q.init(d, d, rng);
        k.init(d, d, rng);
        v.init(d, d, rng);
        o.init(d, d, rng);
        ff1.init(d, cfg.feedforward_dim, rng);
        ff2.init(cfg.feedforward_dim, d, rng);
        ln_attn.init(d);
        ln_ff.init(d);
    }
    void collect(const std::string& prefix, ParamList<S>& out) {
        q.collect(prefix + ".q", out);
        k.collect(prefix + ".k", out);
        v.collect(prefix + ".v", out);
        o.collect(prefix + ".o", out);
        ff1.collect(prefix + ".ff1", out);
        ff2.collect(prefix + ".ff2", out);
        ln_attn.collect(prefix + ".ln_attn", out);
        ln_ff.collect(prefix + ".ln_ff", out);
    }
};

// Scaled dot-product multi-head self-attention over tokens [..., n, d].
// Returns the output and the per-head attention maps [..., heads, n, n]
// (a read-only handle; rollout consumes the values).
template <class S>
std::pair<Tensor<S>, Tensor<S>> multi_head_attention(ForwardCtx<S>& ctx, const Tensor<S>& tokens,
                                                     const TransformerLayerWeights<S>& w,
                                                     const TransformerEncoderConfig& cfg) {
    if (tokens.rank() < 2)
        throw ShapeError("multi_head_attention: tokens must be [..., n, d], got " +
                         shape_str(tokens.shape()));
    const std::size_t n = tokens.dim(tokens.rank() - 2);
    const std::size_t d = tokens.shape().back();
    if (n == 0) throw ValidationError("multi_head_attention: empty token sequence");
    if (d != cfg.model_dim)
        throw ShapeError("multi_head_attention: token dim " + std::to_string(d) +
                         " != model_dim " + std::to_string(cfg.model_dim));
    const std::size_t heads = cfg.num_heads, dh = d / heads;
    const std::size_t lead = tokens.numel() / (n * d);
    const Shape lead_shape(tokens.shape().begin(), tokens.shape().end() - 2);

    Tensor<S> x = tokens.reshaped(Shape{lead, n, d});
    auto split = [&](const Tensor<S>& t) {
        return permute(ctx.tape, t.reshaped(Shape{lead, n, heads, dh}),
                       {0, 2, 1, 3});  // [L, heads, n, dh]
    };
    Tensor<S> qh = split(w.q.apply(ctx, x));
    Tensor<S> kh = split(w.k.apply(ctx, x));
    Tensor<S> vh = split(w.v.apply(ctx, x));

    Tensor<S> kt = permute(ctx.tape, kh, {0, 1, 3, 2});  // [L, heads, dh, n]
    Tensor<S> scores = scale(ctx.tape, bmm(ctx.tape, qh, kt),
                             static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<S> probs = softmax(ctx.tape, scores, -1);  // [L, heads, n, n]
    Tensor<S> context = bmm(ctx.tape, probs, vh);     // [L, heads, n, dh]
    Tensor<S> merged =
        permute(ctx.tape, context, {0, 2, 1, 3}).reshaped(Shape{lead, n, d});
    Tensor<S> out = w.o.apply(ctx, merged);

    Shape out_shape = lead_shape;
    out_shape.push_back(n);
    out_shape.push_back(d);
    Shape attn_shape = lead_shape;
    attn_shape.push_back(heads);
    attn_shape.push_back(n);
    attn_shape.push_back(n);
    return {out.reshaped(out_shape), probs.clone_values().reshaped(attn_shape)};
}

// Mean over the heads axis of [..., heads, n, n] -> [..., n, n]. Value-only.
template <class S>
Tensor<S> average_heads(const Tensor<S>& attn) {
    if (attn.rank() < 3) throw ShapeError("average_heads: expected [..., heads, n, n]");
    const std::size_t n = attn.shape().back();
    const std::size_t heads = attn.dim(attn.rank() - 3);
    const std::size_t lead = attn.numel() / (heads * n * n);
    Shape out_shape(attn.shape().begin(), attn.shape().end() - 3);
    out_shape.push_back(n);
    out_shape.push_back(n);
    Tensor<S> out(out_shape);
    for (std::size_t l = 0; l < lead; ++l)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n * n; ++i)
                out.data()[l * n * n + i] += attn.at((l * heads + h) * n * n + i);
    const S inv = S(1) / static_cast<S>(heads);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] *= inv;
    return out;
}

template <class S>
struct TransformerEncoderWeights {
    TransformerEncoderConfig cfg;
    Tensor<S> pos;  // [n_positions, d] when positional_encoding == learned
    std::vector<TransformerLayerWeights<S>> layers;

    void init(const TransformerEncoderConfig& c, std::size_t n_positions, Rng& rng) {
        c.validate();
        cfg = c;
        layers.assign(cfg.num_layers, {});
        for (auto& l : layers) l.init(cfg, rng);
        if (cfg.positional_encoding == Positional::learned)
            pos = Tensor<S>::randn(Shape{n_positions, cfg.model_dim}, rng, 0.02);
    }
    void collect(const std::string& prefix, ParamList<S>& out) {
        if (cfg.positional_encoding == Positional::learned)
            out.push_back({prefix + ".pos", pos});
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    }
};

// Post-norm Transformer encoder over tokens [..., n, d]. Returns the output
// and the head-averaged attention map of every layer ([..., n, n] each) for
// rollout.
template <class S>
std::pair<Tensor<S>, std::vector<Tensor<S>>> transformer_encoder(
    ForwardCtx<S>& ctx, const Tensor<S>& tokens, const TransformerEncoderWeights<S>& w) {
    const auto& cfg = w.cfg;
    if (tokens.shape().back() != cfg.model_dim)
        throw ShapeError("transformer_encoder: token dim " + shape_str(tokens.shape()) +
                         " != model_dim " + std::to_string(cfg.model_dim));
    const std::size_t n = tokens.dim(tokens.rank() - 2);
    Tensor<S> x = tokens;
    if (cfg.positional_encoding == Positional::learned) {
        if (n > w.pos.dim(0))
            throw ShapeError("transformer_encoder: sequence length " + std::to_string(n) +
                             " exceeds positional table " + shape_str(w.pos.shape()));
        Tensor<S> p = w.pos;
        if (n < w.pos.dim(0)) {
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            p = gather_rows(ctx.tape, w.pos, idx);
        }
        x = add_broadcast(ctx.tape, x, p);
    }
    std::vector<Tensor<S>> attn_per_layer;
    attn_per_layer.reserve(cfg.num_layers);
    for (const auto& layer : w.layers) {
        auto [attn_out, attn_maps] = multi_head_attention(ctx, x, layer, cfg);
        attn_per_layer.push_back(average_heads(attn_maps));
        attn_out = dropout(ctx.tape, attn_out, cfg.dropout_rate, ctx.rng, ctx.training);
        x = layer_norm(ctx.tape, add(ctx.tape, x, attn_out), layer.ln_attn.gamma,
                       layer.ln_attn.beta);
        Tensor<S> ff = layer.ff2.apply(ctx, gelu(ctx.tape, layer.ff1.apply(ctx, x)));
        ff = dropout(ctx.tape, ff, cfg.dropout_rate, ctx.rng, ctx.training);
        x = layer_norm(ctx.tape, add(ctx.tape, x, ff), layer.ln_ff.gamma, layer.ln_ff.beta);
    }
    return {x, std::move(attn_per_layer)};
}

}  // namespace uxmil
