#pragma once

#include <span>
#include <string>
#include <vector>

#include "spinealign/labels/label.hpp"

namespace spinealign::labels {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (divides by N)
};

// Welford accumulation. Empty input gives {0, 0}.
MeanStd mean_std(std::span<const double> values);

struct SummaryRow {
  std::string exposure;  // exposure count, or "Total"
  std::size_t frames = 0;
  MeanStd fitness_rigid, fitness_deformed;
  MeanStd rmse_rigid, rmse_deformed;
};

// One row per exposure in ascending order, then a "Total" row over every
// frame. Skipped frames are left out. Throws InvalidArgument when `labels`
// is empty.
std::vector<SummaryRow> summarize(std::span<const AlignmentLabel> labels);

// Columns: source,exposure,frames,fitness_rigid,fitness_rigid_std,
// fitness_deformed,fitness_deformed_std,rmse_rigid,rmse_rigid_std,
// rmse_deformed,rmse_deformed_std.
std::string summary_rows_csv(const std::vector<SummaryRow>& rows, const std::string& source = "Clinical");

// "0.56(±0.13)" cells as in a printed results table.
std::string format_mean_std(const MeanStd& m, int decimals = 2);

}  // namespace spinealign::labels
