// SPDX-License-Identifier: Apache-2.0

#include "bootmae/masking.hpp"

#include <algorithm>
#include <cmath>

namespace bootmae {

namespace {

void finish_plan(MaskPlan& plan, const std::vector<char>& is_masked) {
    plan.masked.clear();
    plan.visible.clear();
    for (int i = 0; i < plan.n; ++i) {
        if (is_masked[static_cast<std::size_t>(i)])
            plan.masked.push_back(i);
        else
            plan.visible.push_back(i);
    }
    plan.weights.assign(plan.masked.size(), 1.0);
}

}  // namespace

std::uint64_t MaskPlan::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 0x100000001b3ull;
    };
    mix(static_cast<std::uint64_t>(n));
    for (int i : masked) mix(static_cast<std::uint64_t>(i) + 1);
    return h;
}

MaskPlan random_mask(int n, double ratio, Rng& rng) {
    if (n <= 0) throw ConfigError("random_mask requires a positive patch count");
    if (ratio < 0.0 || ratio > 1.0) throw ConfigError("mask ratio must lie in [0,1]");
    const int n_m = static_cast<int>(std::llround(ratio * n));
    MaskPlan plan;
    plan.n = n;
    std::vector<char> is_masked(static_cast<std::size_t>(n), 0);
    for (int i : rng.sample(n, n_m)) is_masked[static_cast<std::size_t>(i)] = 1;
    finish_plan(plan, is_masked);
    return plan;
}

MaskPlan block_mask(int grid_h, int grid_w, double ratio, int min_block, int max_block, Rng& rng,
                    double aspect_min) {
    const int n = grid_h * grid_w;
    if (n <= 0) throw ConfigError("block_mask requires a positive grid");
    if (ratio < 0.0 || ratio > 1.0) throw ConfigError("mask ratio must lie in [0,1]");
    if (min_block < 1 || min_block > max_block || min_block > n)
        throw ConfigError("infeasible block bounds [" + std::to_string(min_block) + "," +
                          std::to_string(max_block) + "] for grid of " + std::to_string(n));
    if (!(aspect_min > 0.0 && aspect_min <= 1.0))
        throw ConfigError("block aspect lower bound must lie in (0,1]");

    const int target = static_cast<int>(std::llround(ratio * n));
    MaskPlan plan;
    plan.n = n;
    plan.block_strategy = true;
    std::vector<char> is_masked(static_cast<std::size_t>(n), 0);
    int count = 0;
    std::vector<int> last_new;
    int attempts = 0;
    const int max_attempts = 10000;
    while (count < target) {
        if (++attempts > max_attempts) {
            // Degenerate bounds can keep re-covering the same cells; fall back
            // to uniform fill of the remainder so the plan still reaches the
            // exact target count.
            std::vector<int> unmasked;
            for (int i = 0; i < n; ++i)
                if (!is_masked[static_cast<std::size_t>(i)]) unmasked.push_back(i);
            rng.shuffle(unmasked);
            last_new.clear();
            for (int i = 0; i < target - count; ++i) {
                is_masked[static_cast<std::size_t>(unmasked[static_cast<std::size_t>(i)])] = 1;
                last_new.push_back(unmasked[static_cast<std::size_t>(i)]);
            }
            count = target;
            break;
        }
        const int area = rng.between(min_block, max_block);
        const double aspect = std::exp(rng.uniform(std::log(aspect_min), std::log(1.0 / aspect_min)));
        int bh = static_cast<int>(std::llround(std::sqrt(area * aspect)));
        int bw = static_cast<int>(std::llround(std::sqrt(area / aspect)));
        bh = std::clamp(bh, 1, grid_h);
        bw = std::clamp(bw, 1, grid_w);
        const int top = rng.below(grid_h - bh + 1);
        const int left = rng.below(grid_w - bw + 1);
        std::vector<int> newly;
        for (int r = top; r < top + bh; ++r)
            for (int c = left; c < left + bw; ++c) {
                const int ix = r * grid_w + c;
                if (!is_masked[static_cast<std::size_t>(ix)]) {
                    is_masked[static_cast<std::size_t>(ix)] = 1;
                    newly.push_back(ix);
                }
            }
        if (newly.empty()) continue;
        plan.blocks.push_back({top, left, bh, bw});
        count += static_cast<int>(newly.size());
        last_new = std::move(newly);
    }
    if (count > target) {
        // Exact-count trim: un-mask a uniform subset of the final block's
        // newly covered cells.
        const int excess = count - target;
        rng.shuffle(last_new);
        for (int i = 0; i < excess; ++i)
            is_masked[static_cast<std::size_t>(last_new[static_cast<std::size_t>(i)])] = 0;
    }
    finish_plan(plan, is_masked);
    return plan;
}

MaskPlan center_weights(const MaskPlan& plan, int grid_h, int grid_w, double w_center) {
    if (!plan.block_strategy)
        throw ContractError("center_weights requires a block_mask plan with block records");
    if (w_center < 1.0) throw ConfigError("w_center must be >= 1");
    MaskPlan out = plan;
    std::vector<char> interior(static_cast<std::size_t>(plan.n), 0);
    for (const MaskedBlock& b : plan.blocks) {
        for (int r = b.top + 1; r < b.top + b.height - 1; ++r)
            for (int c = b.left + 1; c < b.left + b.width - 1; ++c)
                interior[static_cast<std::size_t>(r * grid_w + c)] = 1;
    }
    (void)grid_h;
    for (std::size_t i = 0; i < out.masked.size(); ++i)
        out.weights[i] = interior[static_cast<std::size_t>(out.masked[i])] ? w_center : 1.0;
    return out;
}

int largest_masked_component(const MaskPlan& plan, int grid_h, int grid_w) {
    std::vector<char> is_masked(static_cast<std::size_t>(plan.n), 0);
    for (int i : plan.masked) is_masked[static_cast<std::size_t>(i)] = 1;
    std::vector<char> seen(static_cast<std::size_t>(plan.n), 0);
    int best = 0;
    std::vector<int> stack;
    for (int s : plan.masked) {
        if (seen[static_cast<std::size_t>(s)]) continue;
        int size = 0;
        stack.push_back(s);
        seen[static_cast<std::size_t>(s)] = 1;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            ++size;
            const int r = cur / grid_w, c = cur % grid_w;
            const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& [nr, nc] : nb) {
                if (nr < 0 || nr >= grid_h || nc < 0 || nc >= grid_w) continue;
                const int ix = nr * grid_w + nc;
                if (is_masked[static_cast<std::size_t>(ix)] && !seen[static_cast<std::size_t>(ix)]) {
                    seen[static_cast<std::size_t>(ix)] = 1;
                    stack.push_back(ix);
                }
            }
        }
        best = std::max(best, size);
    }
    return best;
}

}  // namespace bootmae
