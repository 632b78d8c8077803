#pragma once

#include <algorithm>
#include <sstream>
#include <string>

#include "odr/experiments.hpp"
#include "odr/metrics.hpp"

namespace odr {

namespace detail_plot {

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

}  // namespace detail_plot

/// One PR-curve panel per relaxation stage as a standalone SVG. Byte-for-byte
/// deterministic for a given breakdown; every plotted value is a report value.
inline std::string render_pr_stages_svg(const ErrorBreakdown& bd) {
  const int panel_w = 260, panel_h = 240, margin = 40;
  int n = static_cast<int>(bd.curves.size());
  int width = margin + n * panel_w, height = panel_h + 2 * margin;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  for (int s = 0; s < n; ++s) {
    double x0 = margin + s * panel_w, y0 = margin;
    double pw = panel_w - margin, ph = panel_h - margin;
    os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << x0 + pw / 2 << "\" y=\"" << y0 - 8 << "\" text-anchor=\"middle\">"
       << kStageNames[s] << " " << detail_plot::num(bd.areas[s]) << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"rgb(" << 40 * (s + 1) % 255 << ",60,160)\" points=\"";
    for (int i = 0; i < kRecallPoints; ++i) {
      double r = static_cast<double>(i) / (kRecallPoints - 1);
      double p = bd.curves[s][i];
      os << (i ? " " : "") << detail_plot::num(x0 + r * pw) << ","
         << detail_plot::num(y0 + (1.0 - p) * ph);
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Transfer heatmap: rows are targets, columns are sources, each cell labeled
/// with its AP50 value verbatim.
inline std::string render_transfer_heatmap_svg(const TransferMatrix& tm) {
  const int cell = 90, margin = 110;
  int n = static_cast<int>(tm.model_ids.size());
  int width = margin + n * cell + 20, height = margin + n * cell + 20;
  double vmax = 1.0;
  for (const auto& row : tm.ap50)
    for (double v : row) vmax = std::max(vmax, v);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  for (int i = 0; i < n; ++i) {
    os << "<text x=\"" << margin - 8 << "\" y=\"" << margin + i * cell + cell / 2
       << "\" text-anchor=\"end\">" << tm.model_ids[i] << "</text>\n";
    os << "<text x=\"" << margin + i * cell + cell / 2 << "\" y=\"" << margin - 12
       << "\" text-anchor=\"middle\">" << tm.model_ids[i] << "</text>\n";
  }
  for (int t = 0; t < n; ++t) {
    for (int s = 0; s < n; ++s) {
      double v = tm.ap50[t][s];
      int shade = static_cast<int>(255.0 * (1.0 - v / vmax));
      os << "<rect x=\"" << margin + s * cell << "\" y=\"" << margin + t * cell << "\" width=\""
         << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << "," << shade
         << ",255)\" stroke=\"black\"/>\n";
      os << "<text x=\"" << margin + s * cell + cell / 2 << "\" y=\""
         << margin + t * cell + cell / 2 + 4 << "\" text-anchor=\"middle\">"
         << detail_plot::num(v) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace odr
