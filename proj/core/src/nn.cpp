// SPDX-License-Identifier: Apache-2.0

#include "bootmae/nn.hpp"

#include <cmath>

namespace bootmae {

std::vector<double> sincos_pos_table(int grid_h, int grid_w, int d) {
    if (d % 4 != 0)
        throw ConfigError("positional embedding width " + std::to_string(d) +
                          " must be divisible by 4");
    if (grid_h <= 0 || grid_w <= 0) throw ConfigError("positional embedding grid must be positive");
    const int quarter = d / 4;
    std::vector<double> omega(static_cast<std::size_t>(quarter));
    for (int i = 0; i < quarter; ++i) {
        omega[static_cast<std::size_t>(i)] =
            1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
    }
    std::vector<double> table(static_cast<std::size_t>(grid_h) * grid_w * d);
    for (int r = 0; r < grid_h; ++r) {
        for (int c = 0; c < grid_w; ++c) {
            double* row = table.data() + (static_cast<std::size_t>(r) * grid_w + c) * d;
            for (int i = 0; i < quarter; ++i) {
                row[2 * i] = std::sin(r * omega[static_cast<std::size_t>(i)]);
                row[2 * i + 1] = std::cos(r * omega[static_cast<std::size_t>(i)]);
                row[d / 2 + 2 * i] = std::sin(c * omega[static_cast<std::size_t>(i)]);
                row[d / 2 + 2 * i + 1] = std::cos(c * omega[static_cast<std::size_t>(i)]);
            }
        }
    }
    return table;
}

}  // namespace bootmae
