// SPDX-License-Identifier: Apache-2.0
//
// Patch grid bookkeeping and the two masking strategies.

#pragma once

#include <cstdint>
#include <vector>

#include "bootmae/rng.hpp"
#include "bootmae/tensor.hpp"

namespace bootmae {

struct PatchGrid {
    int h = 0, w = 0, c = 0;
    int patch = 0;
    int grid_h = 0, grid_w = 0;

    PatchGrid() = default;
    PatchGrid(int h_, int w_, int c_, int patch_) : h(h_), w(w_), c(c_), patch(patch_) {
        if (patch <= 0 || h % patch != 0 || w % patch != 0)
            throw ConfigError("patch size " + std::to_string(patch) + " does not divide image " +
                              std::to_string(h) + "x" + std::to_string(w));
        grid_h = h / patch;
        grid_w = w / patch;
    }

    int n_patches() const { return grid_h * grid_w; }
    int patch_dim() const { return patch * patch * c; }
};

struct MaskedBlock {
    int top = 0, left = 0, height = 0, width = 0;
};

// The visible/masked partition of a patch grid. Index lists are ascending and
// disjoint; weights align with `masked` and default to 1.
struct MaskPlan {
    int n = 0;
    std::vector<int> masked;
    std::vector<int> visible;
    std::vector<double> weights;
    std::vector<MaskedBlock> blocks;  // retained by block_mask for center_weights
    bool block_strategy = false;

    int n_masked() const { return static_cast<int>(masked.size()); }
    int n_visible() const { return static_cast<int>(visible.size()); }
    std::uint64_t hash() const;
};

MaskPlan random_mask(int n, double ratio, Rng& rng);

// BEiT-style generator: rectangles with area uniform in [min_block, max_block]
// and aspect ratio log-uniform in [aspect_min, 1/aspect_min] are unioned until
// coverage reaches round(ratio*n); the plan is then trimmed to the exact count
// by un-masking a random subset of the last block's newly added cells.
MaskPlan block_mask(int grid_h, int grid_w, double ratio, int min_block, int max_block, Rng& rng,
                    double aspect_min = 0.3);

// Assigns weight `w_center` to masked cells at distance >= 1 from every
// boundary of some recorded block. Requires a block_mask plan.
MaskPlan center_weights(const MaskPlan& plan, int grid_h, int grid_w, double w_center);

// Size of the largest 4-connected masked component.
int largest_masked_component(const MaskPlan& plan, int grid_h, int grid_w);

// Row-major patches; within a patch row-major, channel-last.
template <typename S>
Tensor<S> patchify(const Tensor<S>& image, const PatchGrid& g) {
    if (image.shape() != Shape{g.h, g.w, g.c})
        throw ConfigError("image shape " + shape_str(image.shape()) + " does not match grid " +
                          std::to_string(g.h) + "x" + std::to_string(g.w) + "x" +
                          std::to_string(g.c));
    const auto& v = image.values();
    std::vector<S> out(static_cast<std::size_t>(g.n_patches()) * g.patch_dim());
    std::size_t o = 0;
    for (int gr = 0; gr < g.grid_h; ++gr)
        for (int gc = 0; gc < g.grid_w; ++gc)
            for (int pr = 0; pr < g.patch; ++pr)
                for (int pc = 0; pc < g.patch; ++pc)
                    for (int ch = 0; ch < g.c; ++ch)
                        out[o++] = v[((static_cast<std::size_t>(gr * g.patch + pr) * g.w) +
                                      (gc * g.patch + pc)) *
                                         g.c +
                                     ch];
    return Tensor<S>::from({g.n_patches(), g.patch_dim()}, std::move(out));
}

template <typename S>
Tensor<S> unpatchify(const Tensor<S>& patches, const PatchGrid& g) {
    if (patches.shape() != Shape{g.n_patches(), g.patch_dim()})
        throw ConfigError("patch matrix shape " + shape_str(patches.shape()) +
                          " does not match grid");
    const auto& v = patches.values();
    std::vector<S> out(static_cast<std::size_t>(g.h) * g.w * g.c);
    std::size_t i = 0;
    for (int gr = 0; gr < g.grid_h; ++gr)
        for (int gc = 0; gc < g.grid_w; ++gc)
            for (int pr = 0; pr < g.patch; ++pr)
                for (int pc = 0; pc < g.patch; ++pc)
                    for (int ch = 0; ch < g.c; ++ch)
                        out[((static_cast<std::size_t>(gr * g.patch + pr) * g.w) +
                             (gc * g.patch + pc)) *
                                g.c +
                            ch] = v[i++];
    return Tensor<S>::from({g.h, g.w, g.c}, std::move(out));
}

}  // namespace bootmae
