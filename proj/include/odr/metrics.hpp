#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "odr/core.hpp"

namespace odr {

inline double iou(const Box& a, const Box& b) {
  if (a.area() <= 0.0 || b.area() <= 0.0) throw ContractViolation("iou: degenerate box");
  double ix = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
  double iy = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
  double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

struct DetFlag {
  int det_index = -1;   // index into the original DetectionSet
  double score = 0.0;
  bool tp = false;
  bool ignored = false;
  int gt_index = -1;    // matched gt, or -1
};

struct MatchResult {
  std::vector<DetFlag> dets;  // sorted by descending score, stable
  int n_gt = 0;
};

namespace detail {

inline std::vector<int> score_order(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

/// Greedy per-class matching: detections in descending score order each claim
/// the unmatched gt with highest IoU >= tau; IoU ties go to the lower gt
/// index. Inputs must already be filtered to a single class.
inline MatchResult match_detections(const DetectionSet& dets, const GroundTruthSet& gts,
                                    double tau) {
  MatchResult res;
  res.n_gt = gts.K();
  std::vector<bool> claimed(gts.boxes.size(), false);
  for (int di : detail::score_order(dets.scores)) {
    DetFlag f;
    f.det_index = di;
    f.score = dets.scores[di];
    double best = tau;
    int best_gt = -1;
    for (int gi = 0; gi < gts.K(); ++gi) {
      if (claimed[gi]) continue;
      double v = iou(dets.boxes[di], gts.boxes[gi]);
      if (v >= best && (best_gt == -1 || v > best)) {
        best = v;
        best_gt = gi;
      }
    }
    if (best_gt >= 0) {
      claimed[best_gt] = true;
      f.tp = true;
      f.gt_index = best_gt;
    }
    res.dets.push_back(f);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

constexpr int kRecallPoints = 101;

/// PR curve sampled at recall {0, 0.01, ..., 1} with right-max interpolation.
/// flags must be sorted by descending score over the whole dataset.
inline std::array<double, kRecallPoints> pr_curve(const std::vector<DetFlag>& flags, int n_gt) {
  std::array<double, kRecallPoints> prec{};
  prec.fill(0.0);
  if (n_gt <= 0) return prec;
  std::vector<double> recalls, precisions;
  int tp = 0, fp = 0;
  for (const DetFlag& f : flags) {
    if (f.ignored) continue;
    if (f.tp) tp++;
    else fp++;
    recalls.push_back(static_cast<double>(tp) / n_gt);
    precisions.push_back(static_cast<double>(tp) / (tp + fp));
  }
  // right-max interpolation
  for (int i = static_cast<int>(precisions.size()) - 2; i >= 0; --i)
    precisions[i] = std::max(precisions[i], precisions[i + 1]);
  std::size_t j = 0;
  for (int r = 0; r < kRecallPoints; ++r) {
    double rr = r / 100.0;
    while (j < recalls.size() && recalls[j] < rr - 1e-12) ++j;
    prec[r] = (j < precisions.size()) ? precisions[j] : 0.0;
  }
  return prec;
}

/// n_gt == 0 with no detections -> undefined (excluded from class means);
/// n_gt == 0 with detections -> 0.
inline std::optional<double> average_precision(const std::vector<DetFlag>& flags, int n_gt) {
  bool any = false;
  for (const DetFlag& f : flags)
    if (!f.ignored) { any = true; break; }
  if (n_gt == 0) {
    if (!any) return std::nullopt;
    return 0.0;
  }
  auto curve = pr_curve(flags, n_gt);
  double s = 0.0;
  for (double p : curve) s += p;
  return s / kRecallPoints;
}

/// Legacy 11-point VOC07 rule, available behind a flag for comparison.
inline std::optional<double> average_precision_11pt(const std::vector<DetFlag>& flags, int n_gt) {
  bool any = false;
  for (const DetFlag& f : flags)
    if (!f.ignored) { any = true; break; }
  if (n_gt == 0) return any ? std::optional<double>(0.0) : std::nullopt;
  auto curve = pr_curve(flags, n_gt);
  double s = 0.0;
  for (int r = 0; r <= 100; r += 10) s += curve[r];
  return s / 11.0;
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation
// ---------------------------------------------------------------------------

struct ImageEval {
  DetectionSet dets;
  GroundTruthSet gts;
};

struct EvalReport {
  double ap = 0, ap50 = 0, ap75 = 0;     // x100
  double ap_s = 0, ap_m = 0, ap_l = 0;   // x100; -1 when undefined (no gts in band)
  std::map<int, double> per_class_ap50;  // x100
  int n_images = 0, n_gts = 0, n_dets = 0;
};

namespace detail {

struct Band {
  double lo, hi;  // [lo, hi), continuous areas
};
inline const std::array<Band, 4> kBands = {{{0.0, 1e18},
                                            {0.0, 32.0 * 32.0},
                                            {32.0 * 32.0, 96.0 * 96.0},
                                            {96.0 * 96.0, 1e18}}};

inline bool in_band(double area, const Band& b) { return area >= b.lo && area < b.hi; }

struct PooledEntry {
  double score;
  int image;
  int det_index;
  bool tp;
  bool ignored;
};

/// Per-class, per-threshold, per-band matching pooled over a dataset.
/// Gts outside the band are ignorable: detections may still match them but
/// then count as neither TP nor FP; unmatched detections whose own area is
/// outside the band are likewise ignored.
inline void pooled_match(const std::vector<ImageEval>& data, int cls, double tau,
                         const Band& band, std::vector<DetFlag>& out_flags, int& out_ngt) {
  std::vector<PooledEntry> pooled;
  out_ngt = 0;
  for (int img = 0; img < static_cast<int>(data.size()); ++img) {
    const DetectionSet& d = data[img].dets;
    const GroundTruthSet& g = data[img].gts;
    std::vector<int> gidx;
    for (int gi = 0; gi < g.K(); ++gi)
      if (g.labels[gi] == cls) gidx.push_back(gi);
    std::vector<bool> gt_ignore(gidx.size());
    for (std::size_t k = 0; k < gidx.size(); ++k) {
      gt_ignore[k] = !in_band(g.boxes[gidx[k]].area(), band);
      if (!gt_ignore[k]) out_ngt++;
    }
    std::vector<int> didx;
    for (int di = 0; di < d.size(); ++di)
      if (d.labels[di] == cls) didx.push_back(di);
    std::stable_sort(didx.begin(), didx.end(),
                     [&](int a, int b) { return d.scores[a] > d.scores[b]; });
    std::vector<bool> claimed(gidx.size(), false);
    for (int di : didx) {
      // prefer a non-ignored gt; fall back to an ignored one
      int best_gt = -1;
      double best = tau;
      bool best_ign = true;
      for (std::size_t k = 0; k < gidx.size(); ++k) {
        if (claimed[k]) continue;
        double v = iou(d.boxes[di], g.boxes[gidx[k]]);
        if (v < tau) continue;
        bool better = false;
        if (best_gt == -1) better = true;
        else if (best_ign && !gt_ignore[k]) better = true;
        else if (best_ign == gt_ignore[k] && v > best) better = true;
        if (better) {
          best = v;
          best_gt = static_cast<int>(k);
          best_ign = gt_ignore[k];
        }
      }
      PooledEntry e{d.scores[di], img, di, false, false};
      if (best_gt >= 0) {
        claimed[best_gt] = true;
        if (gt_ignore[best_gt]) e.ignored = true;
        else e.tp = true;
      } else if (!in_band(d.boxes[di].area(), band)) {
        e.ignored = true;
      }
      pooled.push_back(e);
    }
  }
  std::sort(pooled.begin(), pooled.end(), [](const PooledEntry& a, const PooledEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.det_index < b.det_index;
  });
  out_flags.clear();
  for (const PooledEntry& e : pooled) {
    DetFlag f;
    f.det_index = e.det_index;
    f.score = e.score;
    f.tp = e.tp;
    f.ignored = e.ignored;
    out_flags.push_back(f);
  }
}

inline std::set<int> class_universe(const std::vector<ImageEval>& data) {
  std::set<int> classes;
  for (const ImageEval& ie : data) {
    for (int c : ie.gts.labels) classes.insert(c);
    for (int c : ie.dets.labels) classes.insert(c);
  }
  return classes;
}

}  // namespace detail

/// COCO-style report: AP averaged over IoU 0.50:0.05:0.95 and classes,
/// AP50/AP75, and per-scale APs with the 32^2 / 96^2 area bands.
inline EvalReport coco_eval(const std::vector<ImageEval>& data, bool eleven_point = false) {
  EvalReport rep;
  rep.n_images = static_cast<int>(data.size());
  for (const ImageEval& ie : data) {
    rep.n_gts += ie.gts.K();
    rep.n_dets += ie.dets.size();
  }
  std::set<int> classes = detail::class_universe(data);

  std::vector<double> taus;
  for (int i = 0; i < 10; ++i) taus.push_back(0.5 + 0.05 * i);

  auto band_ap = [&](const detail::Band& band, double tau) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (int cls : classes) {
      std::vector<DetFlag> flags;
      int ngt = 0;
      detail::pooled_match(data, cls, tau, band, flags, ngt);
      std::optional<double> ap =
          eleven_point ? average_precision_11pt(flags, ngt) : average_precision(flags, ngt);
      if (ap) {
        sum += *ap;
        n++;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / n;
  };

  auto mean_over_taus = [&](const detail::Band& band) -> double {
    double sum = 0.0;
    int n = 0;
    for (double tau : taus) {
      auto v = band_ap(band, tau);
      if (v) {
        sum += *v;
        n++;
      }
    }
    return n ? 100.0 * sum / n : -1.0;
  };

  rep.ap = mean_over_taus(detail::kBands[0]);
  rep.ap_s = mean_over_taus(detail::kBands[1]);
  rep.ap_m = mean_over_taus(detail::kBands[2]);
  rep.ap_l = mean_over_taus(detail::kBands[3]);
  rep.ap50 = 100.0 * band_ap(detail::kBands[0], 0.50).value_or(0.0);
  rep.ap75 = 100.0 * band_ap(detail::kBands[0], 0.75).value_or(0.0);
  for (int cls : classes) {
    std::vector<DetFlag> flags;
    int ngt = 0;
    detail::pooled_match(data, cls, 0.50, detail::kBands[0], flags, ngt);
    auto ap = average_precision(flags, ngt);
    if (ap) rep.per_class_ap50[cls] = 100.0 * *ap;
  }
  return rep;
}

/// Convenience: dataset AP50 in [0,100].
inline double ap50(const std::vector<ImageEval>& data) {
  double sum = 0.0;
  int n = 0;
  for (int cls : detail::class_universe(data)) {
    std::vector<DetFlag> flags;
    int ngt = 0;
    detail::pooled_match(data, cls, 0.50, detail::kBands[0], flags, ngt);
    auto ap = average_precision(flags, ngt);
    if (ap) {
      sum += *ap;
      n++;
    }
  }
  return n ? 100.0 * sum / n : 0.0;
}

// ---------------------------------------------------------------------------
// Progressive error breakdown
// ---------------------------------------------------------------------------

enum class ErrorStage { C75, C50, Loc, Sim, Oth, BG, FN };

inline const std::vector<std::string> kStageNames = {"C75", "C50", "Loc", "Sim",
                                                     "Oth", "BG",  "FN"};

struct ErrorBreakdown {
  // one curve and area per stage, in relaxation order
  std::vector<std::array<double, kRecallPoints>> curves;
  std::vector<double> areas;       // cumulative, non-decreasing, last == 1
  std::vector<double> increments;  // areas[i] - areas[i-1]
};

/// Stages progressively relax the criteria: IoU 0.75 -> 0.5 -> 0.1 (Loc),
/// then forgiving same-supercategory confusions (Sim), any class confusion
/// (Oth), remaining background FPs (BG) and finally missed gts (FN).
inline ErrorBreakdown error_breakdown(const std::vector<ImageEval>& data,
                                      const std::map<int, int>& similarity_map) {
  std::set<int> classes = detail::class_universe(data);
  for (int c : classes)
    if (!similarity_map.count(c))
      throw ContractViolation("error_breakdown: class missing from similarity map: " +
                              std::to_string(c));

  // Per class and stage: pooled flags + n_gt, then average curves over classes.
  struct StageFlags {
    std::vector<DetFlag> flags;
    int n_gt = 0;
  };

  auto match_stage = [&](int cls, ErrorStage stage) -> StageFlags {
    double tau = 0.1;
    if (stage == ErrorStage::C75) tau = 0.75;
    else if (stage == ErrorStage::C50) tau = 0.5;

    std::vector<detail::PooledEntry> pooled;
    int n_gt = 0;
    int matched_total = 0;
    for (int img = 0; img < static_cast<int>(data.size()); ++img) {
      const DetectionSet& d = data[img].dets;
      const GroundTruthSet& g = data[img].gts;
      std::vector<int> gidx;
      for (int gi = 0; gi < g.K(); ++gi)
        if (g.labels[gi] == cls) gidx.push_back(gi);
      n_gt += static_cast<int>(gidx.size());
      std::vector<int> didx;
      for (int di = 0; di < d.size(); ++di)
        if (d.labels[di] == cls) didx.push_back(di);
      std::stable_sort(didx.begin(), didx.end(),
                       [&](int a, int b) { return d.scores[a] > d.scores[b]; });
      std::vector<bool> claimed(gidx.size(), false);
      for (int di : didx) {
        int best_gt = -1;
        double best = tau;
        for (std::size_t k = 0; k < gidx.size(); ++k) {
          if (claimed[k]) continue;
          double v = iou(d.boxes[di], g.boxes[gidx[k]]);
          if (v >= best && (best_gt == -1 || v > best)) {
            best = v;
            best_gt = static_cast<int>(k);
          }
        }
        detail::PooledEntry e{d.scores[di], img, di, false, false};
        if (best_gt >= 0) {
          claimed[best_gt] = true;
          e.tp = true;
          matched_total++;
        } else if (stage >= ErrorStage::Sim) {
          // forgive class confusions: overlap with a foreign gt -> ignore
          for (int gi = 0; gi < g.K() && !e.ignored; ++gi) {
            if (g.labels[gi] == cls) continue;
            bool same_super =
                similarity_map.at(g.labels[gi]) == similarity_map.at(cls);
            if (stage == ErrorStage::Sim && !same_super) continue;
            if (iou(d.boxes[di], g.boxes[gi]) >= 0.1) e.ignored = true;
          }
        }
        if (stage >= ErrorStage::BG && !e.tp) e.ignored = true;
        pooled.push_back(e);
      }
    }
    if (stage == ErrorStage::FN) n_gt = matched_total;
    std::sort(pooled.begin(), pooled.end(),
              [](const detail::PooledEntry& a, const detail::PooledEntry& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.image != b.image) return a.image < b.image;
                return a.det_index < b.det_index;
              });
    StageFlags out;
    out.n_gt = n_gt;
    for (const detail::PooledEntry& e : pooled) {
      DetFlag f;
      f.det_index = e.det_index;
      f.score = e.score;
      f.tp = e.tp;
      f.ignored = e.ignored;
      out.flags.push_back(f);
    }
    return out;
  };

  ErrorBreakdown bd;
  const std::vector<ErrorStage> stages = {ErrorStage::C75, ErrorStage::C50, ErrorStage::Loc,
                                          ErrorStage::Sim, ErrorStage::Oth, ErrorStage::BG,
                                          ErrorStage::FN};
  for (ErrorStage stage : stages) {
    std::array<double, kRecallPoints> mean_curve{};
    mean_curve.fill(0.0);
    double area_sum = 0.0;
    int n_classes = 0;
    for (int cls : classes) {
      StageFlags sf = match_stage(cls, stage);
      bool has_dets = !sf.flags.empty();
      if (sf.n_gt == 0 && !has_dets) continue;  // class absent at this stage
      std::array<double, kRecallPoints> curve{};
      if (stage == ErrorStage::FN) {
        curve.fill(1.0);  // by definition: remaining misses removed
      } else {
        curve = pr_curve(sf.flags, sf.n_gt);
      }
      double a = 0.0;
      for (double p : curve) a += p;
      a /= kRecallPoints;
      for (int r = 0; r < kRecallPoints; ++r) mean_curve[r] += curve[r];
      area_sum += a;
      n_classes++;
    }
    if (n_classes > 0)
      for (int r = 0; r < kRecallPoints; ++r) mean_curve[r] /= n_classes;
    bd.curves.push_back(mean_curve);
    bd.areas.push_back(n_classes ? area_sum / n_classes : 1.0);
  }
  // FN stage is exactly 1 regardless of per-class bookkeeping
  bd.areas.back() = 1.0;
  bd.curves.back().fill(1.0);
  bd.increments.resize(bd.areas.size());
  for (std::size_t i = 0; i < bd.areas.size(); ++i)
    bd.increments[i] = bd.areas[i] - (i ? bd.areas[i - 1] : 0.0);
  return bd;
}

}  // namespace odr
