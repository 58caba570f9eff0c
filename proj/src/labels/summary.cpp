#include "spinealign/labels/summary.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "spinealign/error.hpp"

namespace spinealign::labels {

MeanStd mean_std(std::span<const double> values) {
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    ++n;
    const double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
  }
  if (n == 0) return {};
  return {mean, std::sqrt(std::max(0.0, m2 / static_cast<double>(n)))};
}

namespace {

struct Columns {
  std::vector<double> fr, fd, rr, rd;

  void add(const FrameLabel& f) {
    fr.push_back(f.rigid.fitness);
    fd.push_back(f.deformed.fitness);
    rr.push_back(f.rigid.inlier_rmse);
    rd.push_back(f.deformed.inlier_rmse);
  }

  SummaryRow row(std::string name) const {
    return {std::move(name), fr.size(), mean_std(fr), mean_std(fd), mean_std(rr), mean_std(rd)};
  }
};

}  // namespace

std::vector<SummaryRow> summarize(std::span<const AlignmentLabel> labels) {
  if (labels.empty()) throw InvalidArgument("summarize: no labels");
  std::map<std::size_t, Columns> groups;
  Columns total;
  for (const auto& label : labels) {
    for (const auto& f : label.frames) {
      if (f.skipped) continue;
      groups[label.exposure].add(f);
      total.add(f);
    }
  }
  std::vector<SummaryRow> rows;
  for (const auto& [exposure, cols] : groups) rows.push_back(cols.row(std::to_string(exposure)));
  rows.push_back(total.row("Total"));
  return rows;
}

std::string summary_rows_csv(const std::vector<SummaryRow>& rows, const std::string& source) {
  std::string out =
      "source,exposure,frames,fitness_rigid,fitness_rigid_std,fitness_deformed,fitness_deformed_std,"
      "rmse_rigid,rmse_rigid_std,rmse_deformed,rmse_deformed_std\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", source, r.exposure,
                       r.frames, r.fitness_rigid.mean, r.fitness_rigid.std, r.fitness_deformed.mean,
                       r.fitness_deformed.std, r.rmse_rigid.mean, r.rmse_rigid.std, r.rmse_deformed.mean,
                       r.rmse_deformed.std);
  }
  return out;
}

std::string format_mean_std(const MeanStd& m, int decimals) {
  return fmt::format("{:.{}f}(±{:.{}f})", m.mean, decimals, m.std, decimals);
}

}  // namespace spinealign::labels
