// SPDX-License-Identifier: Apache-2.0
//
// The four-component architecture: encoder over visible patches, pixel
// regressor, feature predictor, and the cross-attention feature routing
// between them.

#pragma once

#include <string>
#include <vector>

#include "bootmae/masking.hpp"
#include "bootmae/nn.hpp"

namespace bootmae {

enum class MaskStrategy { kRandom, kBlock };

// Encoder tap fed to a decoder's cross-attention.
enum class InjectSource { kOff, kLow, kMid, kHigh };

MaskStrategy parse_mask_strategy(const std::string& s);
InjectSource parse_inject_source(const std::string& s);
std::string to_string(MaskStrategy s);
std::string to_string(InjectSource s);

// Architectural and masking hyperparameters. Defaults follow the reference
// full-scale recipe (224px, patch 16, 12x768 encoder, 512-wide regressor);
// desk-scale runs override shapes via config files.
struct ModelConfig {
    int image_h = 224;
    int image_w = 224;
    int channels = 3;
    int patch = 16;

    int d_enc = 768;
    int depth_enc = 12;
    int heads_enc = 12;

    int d_reg = 512;
    int depth_reg = 2;
    int heads_reg = 8;
    int depth_pre = 2;
    int heads_pre = 12;

    double mask_ratio = 0.75;
    MaskStrategy mask_strategy = MaskStrategy::kBlock;
    int block_min = 16;
    int block_max = 60;
    double block_aspect_min = 0.3;
    double w_center = 1.0;

    InjectSource inject_regressor = InjectSource::kLow;
    InjectSource inject_predictor = InjectSource::kHigh;
    bool xattn_query_norm = true;
    bool xattn_out_proj = true;
    // If set, the high tap feeds the normalized encoder output instead of the
    // raw last-block activation.
    bool inject_deep_normalized = false;

    PatchGrid grid() const { return PatchGrid(image_h, image_w, channels, patch); }
    bool any_injection() const {
        return inject_regressor != InjectSource::kOff || inject_predictor != InjectSource::kOff;
    }
    void validate() const;
};

template <typename S>
struct EncoderParams {
    LinearParams<S> patch_proj;
    std::vector<BlockParams<S>> blocks;
    NormParams<S> final_norm;
};

template <typename S>
struct BootMAEParams {
    ModelConfig cfg;
    ParamStore<S> store;

    EncoderParams<S> enc;

    LinearParams<S> reg_inproj;  // d_enc -> d_reg, widths differ
    Tensor<S> reg_mask_token;    // [d_reg]
    std::vector<BlockParams<S>> reg_blocks;
    NormParams<S> reg_norm;
    LinearParams<S> reg_head;  // d_reg -> P^2 C

    Tensor<S> pre_mask_token;  // [d_enc]
    std::vector<BlockParams<S>> pre_blocks;
    NormParams<S> pre_norm;
    LinearParams<S> pre_head1, pre_head2;  // MLP head, d_enc -> d_enc

    Tensor<S> pos_enc;  // constant [N, d_enc]
    Tensor<S> pos_reg;  // constant [N, d_reg]
};

template <typename S>
EncoderParams<S> make_encoder(ParamStore<S>& store, const std::string& prefix,
                              const ModelConfig& cfg, Rng& rng) {
    EncoderParams<S> e;
    e.patch_proj = make_linear(store, prefix + ".patch", cfg.grid().patch_dim(), cfg.d_enc, rng);
    for (int i = 0; i < cfg.depth_enc; ++i)
        e.blocks.push_back(make_block(store, prefix + ".blk" + std::to_string(i), cfg.d_enc,
                                      cfg.heads_enc, rng));
    e.final_norm = make_norm(store, prefix + ".norm", cfg.d_enc);
    return e;
}

template <typename S>
BootMAEParams<S> make_bootmae(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    BootMAEParams<S> p;
    p.cfg = cfg;
    p.enc = make_encoder(p.store, "enc", cfg, rng);

    p.reg_inproj = make_linear(p.store, "reg.inproj", cfg.d_enc, cfg.d_reg, rng);
    p.reg_mask_token = p.store.add(
        "reg.mask", Tensor<S>::trunc_normal({cfg.d_reg}, rng, static_cast<S>(kInitStd), true));
    for (int i = 0; i < cfg.depth_reg; ++i) {
        std::optional<std::pair<int, bool>> cross;
        if (cfg.inject_regressor != InjectSource::kOff) cross = {cfg.d_enc, true};
        p.reg_blocks.push_back(make_block(p.store, "reg.blk" + std::to_string(i), cfg.d_reg,
                                          cfg.heads_reg, rng, cross, cfg.xattn_query_norm,
                                          cfg.xattn_out_proj));
    }
    p.reg_norm = make_norm(p.store, "reg.norm", cfg.d_reg);
    p.reg_head = make_linear(p.store, "reg.head", cfg.d_reg, cfg.grid().patch_dim(), rng);

    p.pre_mask_token = p.store.add(
        "pre.mask", Tensor<S>::trunc_normal({cfg.d_enc}, rng, static_cast<S>(kInitStd), true));
    for (int i = 0; i < cfg.depth_pre; ++i) {
        std::optional<std::pair<int, bool>> cross;
        if (cfg.inject_predictor != InjectSource::kOff) cross = {cfg.d_enc, true};
        p.pre_blocks.push_back(make_block(p.store, "pre.blk" + std::to_string(i), cfg.d_enc,
                                          cfg.heads_pre, rng, cross, cfg.xattn_query_norm,
                                          cfg.xattn_out_proj));
    }
    p.pre_norm = make_norm(p.store, "pre.norm", cfg.d_enc);
    p.pre_head1 = make_linear(p.store, "pre.head1", cfg.d_enc, cfg.d_enc, rng);
    p.pre_head2 = make_linear(p.store, "pre.head2", cfg.d_enc, cfg.d_enc, rng);

    const PatchGrid g = cfg.grid();
    p.pos_enc = positional_embedding<S>(g.grid_h, g.grid_w, cfg.d_enc);
    p.pos_reg = positional_embedding<S>(g.grid_h, g.grid_w, cfg.d_reg);
    return p;
}

template <typename S>
struct EncodeResult {
    Tensor<S> z_hat;                  // normalized encoder output, [N_v, d_enc]
    std::vector<Tensor<S>> taps;      // per-block outputs, pre final norm
    Tensor<S> shallow() const { return taps.front(); }
    Tensor<S> deep() const { return taps.back(); }
    Tensor<S> mid() const { return taps[(taps.size() - 1) / 2]; }
};

// Runs the encoder stack over visible tokens only. `visible_patches` must hold
// the patch rows at indices outside the mask, ascending.
template <typename S>
EncodeResult<S> encode(const Tensor<S>& visible_patches, const MaskPlan& plan,
                       const EncoderParams<S>& enc, const Tensor<S>& pos_table) {
    if (visible_patches.dim(0) != plan.n_visible())
        throw ContractError("encoder expects " + std::to_string(plan.n_visible()) +
                            " visible tokens, got " + std::to_string(visible_patches.dim(0)));
    Tensor<S> x = add(patch_embed(visible_patches, enc.patch_proj),
                      gather_rows(pos_table, plan.visible));
    EncodeResult<S> r;
    for (const auto& blk : enc.blocks) {
        x = transformer_block(x, blk);
        r.taps.push_back(x);
    }
    r.z_hat = norm(x, enc.final_norm);
    return r;
}

template <typename S>
Tensor<S> select_injection(const EncodeResult<S>& enc_out, InjectSource src,
                           bool deep_normalized) {
    switch (src) {
        case InjectSource::kLow: return enc_out.shallow();
        case InjectSource::kMid: return enc_out.mid();
        case InjectSource::kHigh: return deep_normalized ? enc_out.z_hat : enc_out.deep();
        case InjectSource::kOff: break;
    }
    throw ContractError("no injection source selected");
}

namespace detail {

// Rebuilds the full-length token sequence in original grid order from
// visible tokens and a broadcast mask token, adds positions, then runs the
// decoder blocks.
template <typename S>
Tensor<S> run_decoder(const Tensor<S>& visible_tokens, const Tensor<S>& mask_token,
                      const std::vector<BlockParams<S>>& blocks, const Tensor<S>* inject,
                      const MaskPlan& plan, const Tensor<S>& pos_table) {
    if (inject && inject->dim(0) != plan.n_visible())
        throw ContractError("injected feature must have N_v = " +
                            std::to_string(plan.n_visible()) + " tokens, got " +
                            std::to_string(inject->dim(0)));
    Tensor<S> vis = add(visible_tokens, gather_rows(pos_table, plan.visible));
    Tensor<S> msk = add(repeat_rows(mask_token, plan.n_masked()),
                        gather_rows(pos_table, plan.masked));
    // concat is (visible, masked); invert to grid order
    std::vector<int> unshuffle(static_cast<std::size_t>(plan.n));
    for (int i = 0; i < plan.n_visible(); ++i)
        unshuffle[static_cast<std::size_t>(plan.visible[static_cast<std::size_t>(i)])] = i;
    for (int i = 0; i < plan.n_masked(); ++i)
        unshuffle[static_cast<std::size_t>(plan.masked[static_cast<std::size_t>(i)])] =
            plan.n_visible() + i;
    Tensor<S> seq = gather_rows(concat_rows(vis, msk), unshuffle);
    for (const auto& blk : blocks) seq = transformer_block(seq, blk, inject);
    return seq;
}

}  // namespace detail

// Pixel regressor: predicts all N patch vectors.
template <typename S>
Tensor<S> regress(const Tensor<S>& z_hat, const Tensor<S>& inject, const MaskPlan& plan,
                  const BootMAEParams<S>& p) {
    if (z_hat.dim(0) != plan.n_visible())
        throw ContractError("regressor input does not match plan (token count " +
                            std::to_string(z_hat.dim(0)) + " vs N_v " +
                            std::to_string(plan.n_visible()) + ")");
    const Tensor<S>* inj = inject.defined() ? &inject : nullptr;
    if ((p.cfg.inject_regressor != InjectSource::kOff) != (inj != nullptr))
        throw ContractError("regressor injection does not match configuration");
    Tensor<S> vis = linear(z_hat, p.reg_inproj);
    Tensor<S> seq =
        detail::run_decoder(vis, p.reg_mask_token, p.reg_blocks, inj, plan, p.pos_reg);
    return linear(norm(seq, p.reg_norm), p.reg_head);
}

// Feature predictor: predicts all N token features at encoder width.
template <typename S>
Tensor<S> predict(const Tensor<S>& z_hat, const Tensor<S>& inject, const MaskPlan& plan,
                  const BootMAEParams<S>& p) {
    if (z_hat.dim(0) != plan.n_visible())
        throw ContractError("predictor input does not match plan (token count " +
                            std::to_string(z_hat.dim(0)) + " vs N_v " +
                            std::to_string(plan.n_visible()) + ")");
    const Tensor<S>* inj = inject.defined() ? &inject : nullptr;
    if ((p.cfg.inject_predictor != InjectSource::kOff) != (inj != nullptr))
        throw ContractError("predictor injection does not match configuration");
    Tensor<S> seq =
        detail::run_decoder(z_hat, p.pre_mask_token, p.pre_blocks, inj, plan, p.pos_enc);
    Tensor<S> h = norm(seq, p.pre_norm);
    return linear(gelu(linear(h, p.pre_head1)), p.pre_head2);
}

template <typename S>
struct ForwardArtifacts {
    Tensor<S> z_hat;    // [N_v, d_enc]
    Tensor<S> shallow;  // [N_v, d_enc]
    Tensor<S> deep;     // [N_v, d_enc]
    Tensor<S> xbar;     // [N, P^2 C]
    Tensor<S> fbar;     // [N, d_enc]
};

// patchify -> encode -> { regress, predict } on one image.
template <typename S>
ForwardArtifacts<S> forward(const Tensor<S>& image, const MaskPlan& plan,
                            const BootMAEParams<S>& p) {
    const PatchGrid g = p.cfg.grid();
    if (plan.n != g.n_patches())
        throw ContractError("mask plan covers " + std::to_string(plan.n) + " patches, grid has " +
                            std::to_string(g.n_patches()));
    Tensor<S> patches = patchify(image, g);
    Tensor<S> vis_patches = gather_rows(patches, plan.visible);
    EncodeResult<S> e = encode(vis_patches, plan, p.enc, p.pos_enc);

    ForwardArtifacts<S> a;
    a.z_hat = e.z_hat;
    a.shallow = e.shallow();
    a.deep = e.deep();
    Tensor<S> inj_reg, inj_pre;
    if (p.cfg.inject_regressor != InjectSource::kOff)
        inj_reg = select_injection(e, p.cfg.inject_regressor, p.cfg.inject_deep_normalized);
    if (p.cfg.inject_predictor != InjectSource::kOff)
        inj_pre = select_injection(e, p.cfg.inject_predictor, p.cfg.inject_deep_normalized);
    a.xbar = regress(e.z_hat, inj_reg, plan, p);
    a.fbar = predict(e.z_hat, inj_pre, plan, p);
    return a;
}

}  // namespace bootmae
