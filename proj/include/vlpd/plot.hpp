#pragma once

#include <filesystem>
#include <vector>

#include "vlpd/evaluation.hpp"

namespace vlpd {

// Log-log miss rate vs FPPI curves, one colour per subset, written as PNG.
void plot_miss_rate_curves(const std::vector<SubsetEvaluation>& evals, const std::filesystem::path& out_png,
                           int width = 640, int height = 480);

}  // namespace vlpd
