// SPDX-License-Identifier: Apache-2.0
//
// ViT building blocks: patch projection, fixed 2-D sinusoidal positions,
// multi-head self-attention, the single-head cross-attention used for
// feature injection, and the pre-norm transformer block.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bootmae/tensor.hpp"

namespace bootmae {

// Named registry of trainable leaves in deterministic registration order.
// The optimizer, EMA shadow and checkpoints all iterate this order.
template <typename S>
class ParamStore {
  public:
    Tensor<S> add(const std::string& name, Tensor<S> t) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        params_.push_back(t);
        return t;
    }

    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return params_.size(); }
    Tensor<S>& at(std::size_t i) { return params_[i]; }
    const Tensor<S>& at(std::size_t i) const { return params_[i]; }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor<S>& by_name(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return params_[it->second];
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

  private:
    std::vector<std::string> names_;
    std::vector<Tensor<S>> params_;
    std::map<std::string, std::size_t> index_;
};

template <typename S>
struct LinearParams {
    Tensor<S> w;  // [in, out]
    Tensor<S> b;  // [out]
};

template <typename S>
struct NormParams {
    Tensor<S> g;
    Tensor<S> b;
};

// Multi-head self-attention projections. d_model % heads == 0.
template <typename S>
struct AttentionParams {
    LinearParams<S> q, k, v, o;
    int heads = 1;
};

// Feature-injection cross-attention: queries from the decoder stream at
// d_dec, keys/values projected from the injected encoder feature at d_enc.
// Written single-head with 1/sqrt(d_dec) scaling. The query pre-norm and the
// output projection are toggles; with both off the sub-block evaluates the
// plain residual form queries + softmax(QK^T/sqrt(d_dec))V.
template <typename S>
struct CrossAttentionParams {
    NormParams<S> lnq;
    LinearParams<S> q, k, v;
    LinearParams<S> o;
    bool query_norm = true;
    bool out_proj = true;
};

template <typename S>
struct BlockParams {
    NormParams<S> ln1;
    AttentionParams<S> attn;
    std::optional<CrossAttentionParams<S>> cross;
    NormParams<S> ln2;
    LinearParams<S> fc1, fc2;  // MLP, expansion 4
};

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

inline constexpr double kInitStd = 0.02;

template <typename S>
LinearParams<S> make_linear(ParamStore<S>& store, const std::string& prefix, int in, int out,
                            Rng& rng, bool zero_weight = false) {
    Tensor<S> w = zero_weight ? Tensor<S>::zeros({in, out}, true)
                              : Tensor<S>::trunc_normal({in, out}, rng, static_cast<S>(kInitStd), true);
    Tensor<S> b = Tensor<S>::zeros({out}, true);
    return {store.add(prefix + ".w", w), store.add(prefix + ".b", b)};
}

template <typename S>
NormParams<S> make_norm(ParamStore<S>& store, const std::string& prefix, int d) {
    return {store.add(prefix + ".g", Tensor<S>::full({d}, S(1), true)),
            store.add(prefix + ".b", Tensor<S>::zeros({d}, true))};
}

template <typename S>
AttentionParams<S> make_attention(ParamStore<S>& store, const std::string& prefix, int d, int heads,
                                  Rng& rng) {
    if (heads <= 0 || d % heads != 0)
        throw ConfigError("attention width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    AttentionParams<S> p;
    p.heads = heads;
    p.q = make_linear(store, prefix + ".wq", d, d, rng);
    p.k = make_linear(store, prefix + ".wk", d, d, rng);
    p.v = make_linear(store, prefix + ".wv", d, d, rng);
    // residual-branch output projection starts at zero
    p.o = make_linear(store, prefix + ".wo", d, d, rng, /*zero_weight=*/true);
    return p;
}

template <typename S>
CrossAttentionParams<S> make_cross_attention(ParamStore<S>& store, const std::string& prefix,
                                             int d_dec, int d_enc, Rng& rng, bool query_norm,
                                             bool out_proj) {
    CrossAttentionParams<S> p;
    p.query_norm = query_norm;
    p.out_proj = out_proj;
    p.lnq = make_norm(store, prefix + ".lnq", d_dec);
    p.q = make_linear(store, prefix + ".wq", d_dec, d_dec, rng);
    p.k = make_linear(store, prefix + ".wk", d_enc, d_dec, rng);
    p.v = make_linear(store, prefix + ".wv", d_enc, d_dec, rng);
    p.o = make_linear(store, prefix + ".wo", d_dec, d_dec, rng, /*zero_weight=*/true);
    return p;
}

template <typename S>
BlockParams<S> make_block(ParamStore<S>& store, const std::string& prefix, int d, int heads,
                          Rng& rng, std::optional<std::pair<int, bool>> cross_d_enc = {},
                          bool cross_query_norm = true, bool cross_out_proj = true) {
    BlockParams<S> p;
    p.ln1 = make_norm(store, prefix + ".ln1", d);
    p.attn = make_attention(store, prefix + ".attn", d, heads, rng);
    if (cross_d_enc) {
        p.cross = make_cross_attention(store, prefix + ".x", d, cross_d_enc->first, rng,
                                       cross_query_norm, cross_out_proj);
    }
    p.ln2 = make_norm(store, prefix + ".ln2", d);
    p.fc1 = make_linear(store, prefix + ".mlp.fc1", d, 4 * d, rng);
    p.fc2 = make_linear(store, prefix + ".mlp.fc2", 4 * d, d, rng, /*zero_weight=*/true);
    return p;
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const LinearParams<S>& p) {
    return add(matmul(x, p.w), p.b);
}

template <typename S>
Tensor<S> norm(const Tensor<S>& x, const NormParams<S>& p) {
    return layer_norm(x, p.g, p.b, static_cast<S>(kEps));
}

// One token per flattened patch; positions are added by the caller.
template <typename S>
Tensor<S> patch_embed(const Tensor<S>& patches, const LinearParams<S>& proj) {
    return linear(patches, proj);
}

// Fixed 2-D sinusoidal table for a grid_h x grid_w grid: the first half of
// each row encodes the row coordinate, the second half the column, each as
// interleaved sin/cos over a geometric frequency ladder. Deterministic in
// (grid, d).
std::vector<double> sincos_pos_table(int grid_h, int grid_w, int d);

template <typename S>
Tensor<S> positional_embedding(int grid_h, int grid_w, int d) {
    const std::vector<double> t = sincos_pos_table(grid_h, grid_w, d);
    std::vector<S> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<S>(t[i]);
    return Tensor<S>::from({grid_h * grid_w, d}, std::move(v));
}

// Standard multi-head scaled dot-product attention with output projection.
template <typename S>
Tensor<S> self_attention(const Tensor<S>& tokens, const AttentionParams<S>& p) {
    const int t = tokens.dim(0);
    const int d = tokens.dim(1);
    const int h = p.heads;
    const int dh = d / h;
    Tensor<S> q = linear(tokens, p.q);
    Tensor<S> k = linear(tokens, p.k);
    Tensor<S> v = linear(tokens, p.v);
    // [t,d] -> [h,t,dh]
    auto split = [&](const Tensor<S>& x) {
        return permute(reshape(x, {t, h, dh}), {1, 0, 2});
    };
    Tensor<S> qh = split(q), kh = split(k), vh = split(v);
    Tensor<S> scores = scale(matmul(qh, permute(kh, {0, 2, 1})),
                             static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<S> attn = softmax(scores, 2);
    Tensor<S> ctx = matmul(attn, vh);                       // [h,t,dh]
    Tensor<S> merged = reshape(permute(ctx, {1, 0, 2}), {t, d});
    return linear(merged, p.o);
}

// Residual feature injection: queries + softmax(QK^T/sqrt(d_dec))V with the
// configured query pre-norm / output projection toggles applied.
template <typename S>
Tensor<S> cross_attention(const Tensor<S>& queries, const Tensor<S>& inject,
                          const CrossAttentionParams<S>& p) {
    const int d_dec = queries.dim(1);
    Tensor<S> qin = p.query_norm ? norm(queries, p.lnq) : queries;
    Tensor<S> q = linear(qin, p.q);
    Tensor<S> k = linear(inject, p.k);
    Tensor<S> v = linear(inject, p.v);
    Tensor<S> attn = softmax(scale(matmul(q, transpose2d(k)),
                                   static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_dec)))),
                             1);
    Tensor<S> ctx = matmul(attn, v);
    if (p.out_proj) ctx = linear(ctx, p.o);
    return add(queries, ctx);
}

// Pre-norm block: self-attention, then the optional cross-attention
// sub-block, then the MLP, each with a residual connection. `inject` must be
// provided exactly when the block carries a cross-attention sub-block.
template <typename S>
Tensor<S> transformer_block(const Tensor<S>& tokens, const BlockParams<S>& p,
                            const Tensor<S>* inject = nullptr) {
    if (p.cross && !inject) throw ContractError("block has cross-attention but no injected feature");
    if (!p.cross && inject) throw ContractError("injected feature supplied to a block without cross-attention");
    Tensor<S> x = add(tokens, self_attention(norm(tokens, p.ln1), p.attn));
    if (p.cross) x = cross_attention(x, *inject, *p.cross);
    Tensor<S> m = linear(gelu(linear(norm(x, p.ln2), p.fc1)), p.fc2);
    return add(x, m);
}

}  // namespace bootmae
