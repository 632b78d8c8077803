#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "odr/core.hpp"
#include "odr/metrics.hpp"
#include "odr/objectives.hpp"
#include "odr/optim.hpp"
#include "odr/tensor.hpp"

namespace odr {

// ---------------------------------------------------------------------------
// Convolution primitives (zero padding (k-1)/2, square kernels)
// ---------------------------------------------------------------------------

namespace nn {

inline Tensor conv_forward(const Tensor& in, const Tensor& w, const Tensor& b, int stride) {
  int in_c = in.c(), in_h = in.h(), in_w = in.w();
  int out_c = w.shape()[0], k = w.shape()[2];
  int pad = (k - 1) / 2;
  int out_h = (in_h + 2 * pad - k) / stride + 1;
  int out_w = (in_w + 2 * pad - k) / stride + 1;
  Tensor out({out_c, out_h, out_w});
  for (int o = 0; o < out_c; ++o) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double acc = b[o];
        for (int i = 0; i < in_c; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            int yy = y * stride + ky - pad;
            if (yy < 0 || yy >= in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              int xx = x * stride + kx - pad;
              if (xx < 0 || xx >= in_w) continue;
              acc += w.at4(o, i, ky, kx) * in.at(i, yy, xx);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

/// Accumulates dW/dB when provided; returns gradient w.r.t. the input.
inline Tensor conv_backward(const Tensor& in, const Tensor& w, int stride, const Tensor& d_out,
                            Tensor* d_w, Tensor* d_b) {
  int in_c = in.c(), in_h = in.h(), in_w = in.w();
  int out_c = w.shape()[0], k = w.shape()[2];
  int pad = (k - 1) / 2;
  int out_h = d_out.h(), out_w = d_out.w();
  Tensor d_in = Tensor::zeros_like(in);
  for (int o = 0; o < out_c; ++o) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double g = d_out.at(o, y, x);
        if (g == 0.0) continue;
        if (d_b) (*d_b)[o] += g;
        for (int i = 0; i < in_c; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            int yy = y * stride + ky - pad;
            if (yy < 0 || yy >= in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              int xx = x * stride + kx - pad;
              if (xx < 0 || xx >= in_w) continue;
              if (d_w) d_w->at4(o, i, ky, kx) += g * in.at(i, yy, xx);
              d_in.at(i, yy, xx) += g * w.at4(o, i, ky, kx);
            }
          }
        }
      }
    }
  }
  return d_in;
}

struct LayerDef {
  int w_idx = -1;
  int b_idx = -1;
  int stride = 1;
  bool relu = true;
};

/// acts[0] = input, acts[i+1] = output of layer i (post-ReLU where applied).
inline std::vector<Tensor> stack_forward(const std::vector<Param>& params,
                                         const std::vector<LayerDef>& layers, const Tensor& x) {
  std::vector<Tensor> acts;
  acts.push_back(x);
  for (const LayerDef& l : layers) {
    Tensor out = conv_forward(acts.back(), params[l.w_idx].value, params[l.b_idx].value, l.stride);
    if (l.relu)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    acts.push_back(std::move(out));
  }
  return acts;
}

/// d_top is the gradient at the stack output. Parameter gradients are
/// accumulated into param_grads[i] aligned with params when non-null.
inline Tensor stack_backward(const std::vector<Param>& params,
                             const std::vector<LayerDef>& layers,
                             const std::vector<Tensor>& acts, Tensor d_top,
                             std::vector<Tensor>* param_grads) {
  for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
    const LayerDef& l = layers[li];
    if (l.relu) {
      const Tensor& out = acts[li + 1];
      for (std::size_t i = 0; i < d_top.size(); ++i)
        if (out[i] <= 0.0) d_top[i] = 0.0;
    }
    Tensor* dw = param_grads ? &(*param_grads)[l.w_idx] : nullptr;
    Tensor* db = param_grads ? &(*param_grads)[l.b_idx] : nullptr;
    d_top = conv_backward(acts[li], params[l.w_idx].value, l.stride, d_top, dw, db);
  }
  return d_top;
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Toy detector
// ---------------------------------------------------------------------------

struct ToyDetectorConfig {
  int backbone_blocks = 3;
  int backbone_width = 12;
  int head_layers = 2;
  int head_width = 12;
  int num_classes = 3;
  double score_thresh = 0.25;
  double nms_iou = 0.6;
  int max_dets = 32;

  void validate() const {
    if (backbone_blocks < 1 || backbone_width < 1 || head_layers < 0 || head_width < 1 ||
        num_classes < 1)
      throw ContractViolation("ToyDetectorConfig: all sizes must be positive");
  }
};

/// Closed-form parameter count of the architecture built below.
inline long toy_param_count(const ToyDetectorConfig& cfg, long* backbone_out = nullptr,
                            long* head_out = nullptr) {
  long bb = 3L * 9 * cfg.backbone_width + cfg.backbone_width;
  for (int i = 1; i < cfg.backbone_blocks; ++i)
    bb += 9L * cfg.backbone_width * cfg.backbone_width + cfg.backbone_width;
  long out_ch = cfg.num_classes + 1 + 4;
  long head = 0;
  int in_w = cfg.backbone_width;
  for (int i = 0; i < cfg.head_layers; ++i) {
    head += 9L * in_w * cfg.head_width + cfg.head_width;
    in_w = cfg.head_width;
  }
  head += static_cast<long>(out_ch) * in_w + out_ch;
  if (backbone_out) *backbone_out = bb;
  if (head_out) *head_out = head;
  return bb + head;
}

namespace detail_toy {

struct CellTargets {
  // per instance: list of positive cells with regression targets
  std::vector<std::vector<int>> pos_cells;           // cell index (y*gw+x)
  std::vector<std::vector<std::array<double, 4>>> reg_targets;  // log-space
  std::vector<std::vector<int>> bg_cells;            // background cells allotted per instance
  int gh = 0, gw = 0;
};

inline CellTargets assign_cells(const GroundTruthSet& gt, int gh, int gw, double stride,
                                double min_dist = 0.25) {
  int K = gt.K();
  CellTargets t;
  t.gh = gh;
  t.gw = gw;
  t.pos_cells.resize(K);
  t.reg_targets.resize(K);
  t.bg_cells.resize(K);
  std::vector<int> owner(static_cast<std::size_t>(gh) * gw, -1);
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      double px = (x + 0.5) * stride, py = (y + 0.5) * stride;
      int best = -1;
      double best_area = 1e18;
      for (int i = 0; i < K; ++i) {
        const Box& b = gt.boxes[i];
        if (px >= b.xmin && px <= b.xmax && py >= b.ymin && py <= b.ymax &&
            b.area() < best_area) {
          best = i;
          best_area = b.area();
        }
      }
      owner[y * gw + x] = best;
    }
  }
  auto reg_for = [&](int cell, const Box& b) {
    int y = cell / gw, x = cell % gw;
    double px = (x + 0.5) * stride, py = (y + 0.5) * stride;
    std::array<double, 4> d = {px - b.xmin, py - b.ymin, b.xmax - px, b.ymax - py};
    std::array<double, 4> r;
    for (int k = 0; k < 4; ++k) r[k] = std::log(std::max(d[k], min_dist) / stride);
    return r;
  };
  std::vector<bool> forced(owner.size(), false);
  for (int i = 0; i < K; ++i) {
    for (std::size_t c = 0; c < owner.size(); ++c)
      if (owner[c] == i) {
        t.pos_cells[i].push_back(static_cast<int>(c));
        t.reg_targets[i].push_back(reg_for(static_cast<int>(c), gt.boxes[i]));
      }
    if (t.pos_cells[i].empty()) {
      // tiny box containing no cell center: claim the nearest cell
      double bcx = gt.boxes[i].cx(), bcy = gt.boxes[i].cy();
      int best = 0;
      double best_d = 1e18;
      for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) {
          double px = (x + 0.5) * stride, py = (y + 0.5) * stride;
          double d = (px - bcx) * (px - bcx) + (py - bcy) * (py - bcy);
          if (d < best_d) {
            best_d = d;
            best = y * gw + x;
          }
        }
      t.pos_cells[i].push_back(best);
      t.reg_targets[i].push_back(reg_for(best, gt.boxes[i]));
      forced[best] = true;
    }
  }
  // allot background cells to the nearest instance
  for (std::size_t c = 0; c < owner.size(); ++c) {
    if (owner[c] != -1 || forced[c]) continue;
    int y = static_cast<int>(c) / gw, x = static_cast<int>(c) % gw;
    double px = (x + 0.5) * stride, py = (y + 0.5) * stride;
    int best = 0;
    double best_d = 1e18;
    for (int i = 0; i < K; ++i) {
      double dx = px - gt.boxes[i].cx(), dy = py - gt.boxes[i].cy();
      double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    t.bg_cells[best].push_back(static_cast<int>(c));
  }
  return t;
}

inline void softmax(const double* logits, int n, double* probs) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (int i = 0; i < n; ++i) probs[i] /= sum;
}

}  // namespace detail_toy

class ToyDetector : public Detector {
 public:
  ToyDetector(const ToyDetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    num_classes_ = cfg.num_classes;
    Rng rng(seed);
    int in_c = 3;
    for (int i = 0; i < cfg.backbone_blocks; ++i) {
      int stride = i < 3 ? 2 : 1;
      add_conv("backbone.conv" + std::to_string(i), "backbone", in_c, cfg.backbone_width, 3,
               stride, true, rng);
      in_c = cfg.backbone_width;
    }
    stride_ = 1 << std::min(3, cfg.backbone_blocks);
    for (int i = 0; i < cfg.head_layers; ++i) {
      add_conv("head.conv" + std::to_string(i), "head", in_c, cfg.head_width, 3, 1, true, rng);
      in_c = cfg.head_width;
    }
    add_conv("head.out", "head", in_c, cfg.num_classes + 1 + 4, 1, 1, false, rng,
             /*init_scale=*/0.1);
    // bias the background logit up so the fresh detector predicts background
    params_[layers_.back().b_idx].value[cfg.num_classes] = 2.0;
  }

  const ToyDetectorConfig& config() const { return cfg_; }
  int grid_stride() const { return stride_; }

  std::vector<Param>& params() override { return params_; }
  const std::vector<Param>& params() const override { return params_; }

  PerInstanceLosses losses(const PixelImage& x, const GroundTruthSet& gt) const override {
    auto acts = nn::stack_forward(params_, layers_, x.data);
    return losses_from_output(acts.back(), gt);
  }

  DetectionSet detect(const PixelImage& x) const override {
    auto acts = nn::stack_forward(params_, layers_, x.data);
    const Tensor& out = acts.back();
    int C = cfg_.num_classes;
    int gh = out.h(), gw = out.w();
    double H = x.data.h(), W = x.data.w();
    struct Cand {
      Box box;
      int label;
      double score;
    };
    std::vector<Cand> cands;
    std::vector<double> probs(C + 1);
    std::vector<double> logits(C + 1);
    for (int y = 0; y < gh; ++y) {
      for (int x2 = 0; x2 < gw; ++x2) {
        for (int c = 0; c <= C; ++c) logits[c] = out.at(c, y, x2);
        detail_toy::softmax(logits.data(), C + 1, probs.data());
        double px = (x2 + 0.5) * stride_, py = (y + 0.5) * stride_;
        for (int c = 0; c < C; ++c) {
          if (probs[c] < cfg_.score_thresh) continue;
          std::array<double, 4> d;
          for (int k = 0; k < 4; ++k)
            d[k] = stride_ * std::exp(std::clamp(out.at(C + 1 + k, y, x2), -6.0, 6.0));
          Box b{px - d[0], py - d[1], px + d[2], py + d[3]};
          b.xmin = std::clamp(b.xmin, 0.0, W);
          b.xmax = std::clamp(b.xmax, 0.0, W);
          b.ymin = std::clamp(b.ymin, 0.0, H);
          b.ymax = std::clamp(b.ymax, 0.0, H);
          if (b.xmax - b.xmin < 1e-6 || b.ymax - b.ymin < 1e-6) continue;
          cands.push_back({b, c, probs[c]});
        }
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });
    DetectionSet dets;
    for (const Cand& c : cands) {
      bool keep = true;
      for (int i = 0; i < dets.size() && keep; ++i)
        if (dets.labels[i] == c.label && iou(dets.boxes[i], c.box) >= cfg_.nms_iou) keep = false;
      if (!keep) continue;
      dets.boxes.push_back(c.box);
      dets.labels.push_back(c.label);
      dets.scores.push_back(c.score);
      if (dets.size() >= cfg_.max_dets) break;
    }
    return dets;
  }

  Tensor input_gradient(ObjectiveKind kind, const PixelImage& x,
                        const GroundTruthSet& gt) const override {
    return backward_impl(kind, x, gt, nullptr);
  }

  Tensor backward(ObjectiveKind kind, const PixelImage& x, const GroundTruthSet& gt) override {
    for (Param& p : params_) {
      if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros_like(p.value);
    }
    std::vector<Tensor> local(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) local[i] = Tensor::zeros_like(params_[i].value);
    Tensor din = backward_impl(kind, x, gt, &local);
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].grad += local[i];
    return din;
  }

 private:
  void add_conv(const std::string& name, const std::string& group, int in_c, int out_c, int k,
                int stride, bool relu, Rng& rng, double init_scale = 1.0) {
    Param w;
    w.name = name + ".w";
    w.group = group;
    w.value = Tensor({out_c, in_c, k, k});
    double std = init_scale * std::sqrt(2.0 / (in_c * k * k));
    for (std::size_t i = 0; i < w.value.size(); ++i) w.value[i] = std * rng.normal();
    w.grad = Tensor::zeros_like(w.value);
    Param b;
    b.name = name + ".b";
    b.group = group;
    b.value = Tensor({out_c});
    b.grad = Tensor::zeros_like(b.value);
    nn::LayerDef l;
    l.w_idx = static_cast<int>(params_.size());
    params_.push_back(std::move(w));
    l.b_idx = static_cast<int>(params_.size());
    params_.push_back(std::move(b));
    l.stride = stride;
    l.relu = relu;
    layers_.push_back(l);
  }

  PerInstanceLosses losses_from_output(const Tensor& out, const GroundTruthSet& gt) const {
    int C = cfg_.num_classes;
    int gh = out.h(), gw = out.w();
    auto tg = detail_toy::assign_cells(gt, gh, gw, stride_);
    PerInstanceLosses pil;
    std::vector<double> probs(C + 1), logits(C + 1);
    auto ce_at = [&](int cell, int target) {
      int y = cell / gw, x = cell % gw;
      for (int c = 0; c <= C; ++c) logits[c] = out.at(c, y, x);
      detail_toy::softmax(logits.data(), C + 1, probs.data());
      return -std::log(std::max(probs[target], 1e-300));
    };
    for (int i = 0; i < gt.K(); ++i) {
      double n_pos = static_cast<double>(tg.pos_cells[i].size());
      double lc = 0.0, lr = 0.0;
      for (std::size_t j = 0; j < tg.pos_cells[i].size(); ++j) {
        int cell = tg.pos_cells[i][j];
        lc += ce_at(cell, gt.labels[i]);
        int y = cell / gw, x = cell % gw;
        for (int k = 0; k < 4; ++k)
          lr += std::fabs(out.at(C + 1 + k, y, x) - tg.reg_targets[i][j][k]);
      }
      for (int cell : tg.bg_cells[i]) lc += ce_at(cell, C);
      pil.cls.push_back(lc / n_pos);
      pil.reg.push_back(lr / (4.0 * n_pos));
    }
    pil.validate();
    return pil;
  }

  /// Shared forward+backward; param_grads (aligned with params_) optional.
  Tensor backward_impl(ObjectiveKind kind, const PixelImage& x, const GroundTruthSet& gt,
                       std::vector<Tensor>* param_grads) const {
    if (gt.K() < 1) throw ContractViolation("ToyDetector: K must be >= 1 for gradients");
    auto acts = nn::stack_forward(params_, layers_, x.data);
    const Tensor& out = acts.back();
    PerInstanceLosses pil = losses_from_output(out, gt);

    ClassWeightVector cw;
    const ClassWeightVector* cwp = nullptr;
    if (kind == ObjectiveKind::CWA) {
      cw = cwa_weights(gt.labels);
      cwp = &cw;
    }
    std::vector<double> w_cls, w_reg;
    objective_seed(kind, pil, cwp, w_cls, w_reg);

    int C = cfg_.num_classes;
    int gh = out.h(), gw = out.w();
    auto tg = detail_toy::assign_cells(gt, gh, gw, stride_);
    Tensor d_out = Tensor::zeros_like(out);
    std::vector<double> probs(C + 1), logits(C + 1);
    auto add_ce_grad = [&](int cell, int target, double weight) {
      if (weight == 0.0) return;
      int y = cell / gw, x2 = cell % gw;
      for (int c = 0; c <= C; ++c) logits[c] = out.at(c, y, x2);
      detail_toy::softmax(logits.data(), C + 1, probs.data());
      for (int c = 0; c <= C; ++c)
        d_out.at(c, y, x2) += weight * (probs[c] - (c == target ? 1.0 : 0.0));
    };
    for (int i = 0; i < gt.K(); ++i) {
      double n_pos = static_cast<double>(tg.pos_cells[i].size());
      double wc = w_cls[i] / n_pos;
      double wr = w_reg[i] / (4.0 * n_pos);
      for (std::size_t j = 0; j < tg.pos_cells[i].size(); ++j) {
        int cell = tg.pos_cells[i][j];
        add_ce_grad(cell, gt.labels[i], wc);
        int y = cell / gw, x2 = cell % gw;
        for (int k = 0; k < 4; ++k)
          d_out.at(C + 1 + k, y, x2) +=
              wr * sign0(out.at(C + 1 + k, y, x2) - tg.reg_targets[i][j][k]);
      }
      for (int cell : tg.bg_cells[i]) add_ce_grad(cell, C, wc);
    }
    return nn::stack_backward(params_, layers_, acts, std::move(d_out), param_grads);
  }

  ToyDetectorConfig cfg_;
  int stride_ = 8;
  std::vector<Param> params_;
  std::vector<nn::LayerDef> layers_;
};

inline std::unique_ptr<ToyDetector> build_toy_detector(const ToyDetectorConfig& cfg,
                                                       std::uint64_t seed) {
  return std::make_unique<ToyDetector>(cfg, seed);
}

// ---------------------------------------------------------------------------
// Synthetic shapes dataset
// ---------------------------------------------------------------------------

struct ShapesDatasetSpec {
  int n_images = 64;
  int height = 64;
  int width = 64;
  int num_classes = 3;  // 0 = rectangle, 1 = ellipse, 2 = triangle
  int min_objects = 1;
  int max_objects = 4;
  double min_size = 10.0;
  double max_size = 28.0;
  double noise = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_images < 0 || height < 8 || width < 8) throw ContractViolation("ShapesDatasetSpec: bad dims");
    if (num_classes < 1 || num_classes > 3)
      throw ContractViolation("ShapesDatasetSpec: num_classes must be 1..3");
    if (min_objects < 0 || max_objects < min_objects)
      throw ContractViolation("ShapesDatasetSpec: bad object range");
    if (!(min_size >= 4.0 && max_size >= min_size))
      throw ContractViolation("ShapesDatasetSpec: bad size range");
    if (max_size > std::min(height, width))
      throw ContractViolation("ShapesDatasetSpec: infeasible, objects cannot fit");
  }
};

struct DetectionExample {
  PixelImage image;
  GroundTruthSet gt;
};

struct ClassificationExample {
  PixelImage image;  // 3 x 32 x 32 crop
  int label = 0;
};

struct ShapesDataset {
  std::vector<DetectionExample> detection;
  std::vector<ClassificationExample> classification;  // derived single-object crops
};

namespace detail_toy {

inline double bilinear(const Tensor& img, int ch, double y, double x) {
  int h = img.h(), w = img.w();
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * img.at(ch, y0, x0) + fx * img.at(ch, y0, x1)) +
         fy * ((1 - fx) * img.at(ch, y1, x0) + fx * img.at(ch, y1, x1));
}

inline Tensor crop_resize(const Tensor& img, const Box& box, int out_size) {
  Tensor out({img.c(), out_size, out_size});
  double pad = 2.0;
  double x0 = std::max(0.0, box.xmin - pad), y0 = std::max(0.0, box.ymin - pad);
  double x1 = std::min(static_cast<double>(img.w()), box.xmax + pad);
  double y1 = std::min(static_cast<double>(img.h()), box.ymax + pad);
  for (int c = 0; c < img.c(); ++c)
    for (int y = 0; y < out_size; ++y)
      for (int x = 0; x < out_size; ++x) {
        double sy = y0 + (y + 0.5) / out_size * (y1 - y0) - 0.5;
        double sx = x0 + (x + 0.5) / out_size * (x1 - x0) - 0.5;
        out.at(c, y, x) = std::clamp(bilinear(img, c, sy, sx), 0.0, 1.0);
      }
  return out;
}

inline bool inside_shape(int cls, const Box& b, double px, double py) {
  if (px < b.xmin || px > b.xmax || py < b.ymin || py > b.ymax) return false;
  switch (cls) {
    case 0:
      return true;  // rectangle fills its box
    case 1: {       // inscribed ellipse
      double rx = 0.5 * (b.xmax - b.xmin), ry = 0.5 * (b.ymax - b.ymin);
      double dx = (px - b.cx()) / rx, dy = (py - b.cy()) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case 2: {  // upward triangle, base at the bottom edge
      double t = (py - b.ymin) / (b.ymax - b.ymin);
      double hw = 0.5 * t * (b.xmax - b.xmin);
      return std::fabs(px - b.cx()) <= hw;
    }
  }
  return false;
}

}  // namespace detail_toy

/// Seeded, reproducible generator. Class labels follow a global round-robin,
/// keeping per-class counts within one of uniform. Box areas are drawn by
/// first picking an (achievable) COCO area band so all bands stay populated
/// when the image is large enough to host them.
inline ShapesDataset generate_shapes_dataset(const ShapesDatasetSpec& spec) {
  spec.validate();
  ShapesDataset ds;
  long label_counter = 0;

  const double band_lo[3] = {0.0, 32.0 * 32.0, 96.0 * 96.0};
  const double band_hi[3] = {32.0 * 32.0, 96.0 * 96.0, 1e18};
  std::vector<int> achievable_bands;
  for (int b = 0; b < 3; ++b) {
    double amin = spec.min_size * spec.min_size, amax = spec.max_size * spec.max_size;
    if (amax >= band_lo[b] && amin < band_hi[b]) achievable_bands.push_back(b);
  }

  for (int n = 0; n < spec.n_images; ++n) {
    Rng rng = Rng(spec.seed).derive(0x1000 + static_cast<std::uint64_t>(n));
    double bg = rng.uniform(0.25, 0.75);
    Tensor img({3, spec.height, spec.width});
    for (std::size_t i = 0; i < img.size(); ++i)
      img[i] = std::clamp(bg + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0);

    int want = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
    GroundTruthSet gt;
    for (int obj = 0; obj < want; ++obj) {
      bool placed = false;
      for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        int band = achievable_bands[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(achievable_bands.size()) - 1))];
        double w = 0, h = 0;
        bool ok = false;
        for (int t = 0; t < 64 && !ok; ++t) {
          w = rng.uniform(spec.min_size, spec.max_size);
          h = rng.uniform(spec.min_size, spec.max_size);
          double a = w * h;
          ok = a >= band_lo[band] && a < band_hi[band];
        }
        if (!ok) continue;
        if (w > spec.width || h > spec.height) continue;
        double x0 = rng.uniform(0.0, spec.width - w);
        double y0 = rng.uniform(0.0, spec.height - h);
        Box b{x0, y0, x0 + w, y0 + h};
        bool overlap = false;
        for (const Box& other : gt.boxes)
          if (iou(b, other) > 0.25) overlap = true;
        if (overlap) continue;
        int cls = static_cast<int>(label_counter % spec.num_classes);
        label_counter++;
        // contrasting color, each channel pushed away from the background
        double col[3];
        for (double& c : col)
          c = bg < 0.5 ? rng.uniform(bg + 0.3, 1.0) : rng.uniform(0.0, bg - 0.3);
        for (int y = std::max(0, static_cast<int>(b.ymin));
             y < std::min(spec.height, static_cast<int>(std::ceil(b.ymax))); ++y)
          for (int x = std::max(0, static_cast<int>(b.xmin));
               x < std::min(spec.width, static_cast<int>(std::ceil(b.xmax))); ++x)
            if (detail_toy::inside_shape(cls, b, x + 0.5, y + 0.5))
              for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
        gt.boxes.push_back(b);
        gt.labels.push_back(cls);
        placed = true;
      }
      if (!placed && static_cast<int>(gt.boxes.size()) < spec.min_objects)
        throw ContractViolation("generate_shapes_dataset: infeasible spec, cannot place objects");
    }
    PixelImage px(std::move(img), "img" + std::to_string(n));
    gt.validate(spec.height, spec.width);
    for (int i = 0; i < gt.K(); ++i) {
      ClassificationExample ce;
      ce.image = PixelImage(detail_toy::crop_resize(px.data, gt.boxes[i], 32),
                            px.id + "_obj" + std::to_string(i));
      ce.label = gt.labels[i];
      ds.classification.push_back(std::move(ce));
    }
    ds.detection.push_back({std::move(px), std::move(gt)});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Upstream classifier for backbone pre-training
// ---------------------------------------------------------------------------

class ToyClassifier {
 public:
  ToyClassifier(const ToyDetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    int in_c = 3;
    for (int i = 0; i < cfg.backbone_blocks; ++i) {
      int stride = i < 3 ? 2 : 1;
      add_conv("backbone.conv" + std::to_string(i), "backbone", in_c, cfg.backbone_width, 3,
               stride, rng);
      in_c = cfg.backbone_width;
    }
    Param w;
    w.name = "probe.w";
    w.group = "head";
    w.value = Tensor({cfg.num_classes, cfg.backbone_width});
    double std = std::sqrt(2.0 / cfg.backbone_width);
    for (std::size_t i = 0; i < w.value.size(); ++i) w.value[i] = std * rng.normal();
    w.grad = Tensor::zeros_like(w.value);
    params_.push_back(std::move(w));
    Param b;
    b.name = "probe.b";
    b.group = "head";
    b.value = Tensor({cfg.num_classes});
    b.grad = Tensor::zeros_like(b.value);
    params_.push_back(std::move(b));
    probe_w_ = static_cast<int>(params_.size()) - 2;
    probe_b_ = static_cast<int>(params_.size()) - 1;
  }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  std::vector<double> logits(const PixelImage& x) const {
    auto acts = nn::stack_forward(params_, layers_, x.data);
    return probe_logits(acts.back());
  }

  int predict(const PixelImage& x) const {
    auto lg = logits(x);
    return static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin());
  }

  double loss(const PixelImage& x, int label) const {
    auto lg = logits(x);
    std::vector<double> probs(lg.size());
    detail_toy::softmax(lg.data(), static_cast<int>(lg.size()), probs.data());
    return -std::log(std::max(probs[label], 1e-300));
  }

  /// CE gradient w.r.t. input; parameter gradients accumulated when asked.
  Tensor backward(const PixelImage& x, int label, bool accumulate_params) {
    auto acts = nn::stack_forward(params_, layers_, x.data);
    const Tensor& feat = acts.back();
    auto lg = probe_logits(feat);
    int C = cfg_.num_classes;
    std::vector<double> probs(C);
    detail_toy::softmax(lg.data(), C, probs.data());
    std::vector<double> dlg(C);
    for (int c = 0; c < C; ++c) dlg[c] = probs[c] - (c == label ? 1.0 : 0.0);

    const Tensor& pw = params_[probe_w_].value;
    int gh = feat.h(), gw = feat.w();
    double inv_hw = 1.0 / (gh * gw);
    Tensor d_feat = Tensor::zeros_like(feat);
    for (int c = 0; c < C; ++c) {
      for (int f = 0; f < cfg_.backbone_width; ++f) {
        double g = dlg[c] * pw[static_cast<std::size_t>(c) * cfg_.backbone_width + f] * inv_hw;
        for (int y = 0; y < gh; ++y)
          for (int x2 = 0; x2 < gw; ++x2) d_feat.at(f, y, x2) += g;
      }
    }
    std::vector<Tensor> local;
    std::vector<Tensor>* pg = nullptr;
    if (accumulate_params) {
      local.resize(params_.size());
      for (std::size_t i = 0; i < params_.size(); ++i)
        local[i] = Tensor::zeros_like(params_[i].value);
      // probe grads
      for (int c = 0; c < C; ++c) {
        local[probe_b_][c] += dlg[c];
        for (int f = 0; f < cfg_.backbone_width; ++f) {
          double gap = 0.0;
          for (int y = 0; y < gh; ++y)
            for (int x2 = 0; x2 < gw; ++x2) gap += feat.at(f, y, x2);
          local[probe_w_][static_cast<std::size_t>(c) * cfg_.backbone_width + f] +=
              dlg[c] * gap * inv_hw;
        }
      }
      pg = &local;
    }
    Tensor din = nn::stack_backward(params_, layers_, acts, std::move(d_feat), pg);
    if (accumulate_params)
      for (std::size_t i = 0; i < params_.size(); ++i) params_[i].grad += local[i];
    return din;
  }

 private:
  void add_conv(const std::string& name, const std::string& group, int in_c, int out_c, int k,
                int stride, Rng& rng) {
    Param w;
    w.name = name + ".w";
    w.group = group;
    w.value = Tensor({out_c, in_c, k, k});
    double std = std::sqrt(2.0 / (in_c * k * k));
    for (std::size_t i = 0; i < w.value.size(); ++i) w.value[i] = std * rng.normal();
    w.grad = Tensor::zeros_like(w.value);
    Param b;
    b.name = name + ".b";
    b.group = group;
    b.value = Tensor({out_c});
    b.grad = Tensor::zeros_like(b.value);
    nn::LayerDef l;
    l.w_idx = static_cast<int>(params_.size());
    params_.push_back(std::move(w));
    l.b_idx = static_cast<int>(params_.size());
    params_.push_back(std::move(b));
    l.stride = stride;
    l.relu = true;
    layers_.push_back(l);
  }

  std::vector<double> probe_logits(const Tensor& feat) const {
    int gh = feat.h(), gw = feat.w();
    std::vector<double> gap(cfg_.backbone_width, 0.0);
    for (int f = 0; f < cfg_.backbone_width; ++f) {
      for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) gap[f] += feat.at(f, y, x);
      gap[f] /= gh * gw;
    }
    const Tensor& pw = params_[probe_w_].value;
    const Tensor& pb = params_[probe_b_].value;
    std::vector<double> lg(cfg_.num_classes);
    for (int c = 0; c < cfg_.num_classes; ++c) {
      double acc = pb[c];
      for (int f = 0; f < cfg_.backbone_width; ++f)
        acc += pw[static_cast<std::size_t>(c) * cfg_.backbone_width + f] * gap[f];
      lg[c] = acc;
    }
    return lg;
  }

  ToyDetectorConfig cfg_;
  std::vector<Param> params_;
  std::vector<nn::LayerDef> layers_;
  int probe_w_ = -1, probe_b_ = -1;
};

enum class PretrainMode { Benign, Adversarial };

struct BackboneCheckpoint {
  std::vector<Param> params;  // backbone group only
  std::string provenance;     // "upstream_benign" | "upstream_adversarial"
};

struct PretrainConfig {
  int epochs = 12;
  int batch_size = 16;
  double lr = 2e-3;
  double weight_decay = 1e-4;
  AttackBudget budget;      // used in adversarial mode
  int attack_steps = 5;
};

/// PGD on the classifier's CE loss, random start, used both for adversarial
/// pre-training and for robustness probes of the classifier.
inline PixelImage pgd_attack_classifier(ToyClassifier& clf, const PixelImage& x, int label,
                                        const AttackBudget& budget, int steps, Rng& rng) {
  double eps = budget.eps01();
  double alpha = budget.alpha_fraction * eps;
  Tensor delta = Tensor::zeros_like(x.data);
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = rng.uniform(-eps, eps);
  auto project = [&]() {
    for (std::size_t i = 0; i < delta.size(); ++i) {
      double d = std::clamp(delta[i], -eps, eps);
      delta[i] = std::clamp(x.data[i] + d, 0.0, 1.0) - x.data[i];
    }
  };
  project();
  for (int t = 0; t < steps; ++t) {
    Tensor cur = x.data;
    cur += delta;
    Tensor g = clf.backward(PixelImage(cur, x.id), label, false);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += alpha * sign0(g[i]);
    project();
  }
  Tensor adv = x.data;
  adv += delta;
  return PixelImage(std::move(adv), x.id);
}

inline double classifier_accuracy(ToyClassifier& clf,
                                  const std::vector<ClassificationExample>& data) {
  if (data.empty()) return 0.0;
  int correct = 0;
  for (const ClassificationExample& e : data)
    if (clf.predict(e.image) == e.label) correct++;
  return static_cast<double>(correct) / data.size();
}

inline double classifier_robust_accuracy(ToyClassifier& clf,
                                         const std::vector<ClassificationExample>& data,
                                         const AttackBudget& budget, int steps,
                                         std::uint64_t seed) {
  if (data.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng = Rng(seed).derive(i);
    PixelImage adv = pgd_attack_classifier(clf, data[i].image, data[i].label, budget, steps, rng);
    if (clf.predict(adv) == data[i].label) correct++;
  }
  return static_cast<double>(correct) / data.size();
}

/// Trains backbone + linear probe on the classification split. Adversarial
/// mode performs PGD-AT on every minibatch example before the update.
inline BackboneCheckpoint pretrain_toy_backbone(PretrainMode mode, const ToyDetectorConfig& cfg,
                                                const std::vector<ClassificationExample>& split,
                                                const PretrainConfig& pc, std::uint64_t seed) {
  if (split.empty()) throw ContractViolation("pretrain_toy_backbone: empty classification split");
  ToyClassifier clf(cfg, seed);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::AdaptiveDecoupledWd;
  oc.weight_decay = pc.weight_decay;
  OptimState state;
  state.init(clf.params());
  std::vector<double> lrs(clf.params().size(), pc.lr);

  std::vector<int> order(split.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int ep = 0; ep < pc.epochs; ++ep) {
    Rng erng = Rng(seed).derive(0x2000 + static_cast<std::uint64_t>(ep));
    erng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += pc.batch_size) {
      std::size_t end = std::min(order.size(), start + pc.batch_size);
      zero_grads(clf.params());
      for (std::size_t i = start; i < end; ++i) {
        const ClassificationExample& e = split[order[i]];
        PixelImage input = e.image;
        if (mode == PretrainMode::Adversarial) {
          Rng arng = erng.derive(0x3000 + i);
          input = pgd_attack_classifier(clf, e.image, e.label, pc.budget, pc.attack_steps, arng);
        }
        clf.backward(input, e.label, true);
      }
      scale_grads(clf.params(), 1.0 / static_cast<double>(end - start));
      optimizer_step(oc, clf.params(), state, lrs);
    }
  }

  BackboneCheckpoint ckpt;
  for (const Param& p : clf.params())
    if (p.group == "backbone") ckpt.params.push_back(p);
  ckpt.provenance =
      mode == PretrainMode::Adversarial ? "upstream_adversarial" : "upstream_benign";
  return ckpt;
}

// ---------------------------------------------------------------------------
// Compute-allocation variants
// ---------------------------------------------------------------------------

/// Emits configs of (approximately) equal total parameter budget with the
/// requested backbone/head shares, by scanning widths.
inline std::vector<ToyDetectorConfig> reallocation_variants(long budget,
                                                            const std::vector<std::pair<double, double>>& shares,
                                                            const ToyDetectorConfig& base) {
  std::vector<ToyDetectorConfig> out;
  for (auto [bs, hs] : shares) {
    if (std::fabs(bs + hs - 1.0) > 1e-9)
      throw ContractViolation("reallocation_variants: shares must sum to 1");
    ToyDetectorConfig best = base;
    long best_err = -1;
    for (int bw = 2; bw <= 96; ++bw) {
      for (int hw = 2; hw <= 96; ++hw) {
        ToyDetectorConfig cfg = base;
        cfg.backbone_width = bw;
        cfg.head_width = hw;
        long bb = 0, hd = 0;
        toy_param_count(cfg, &bb, &hd);
        long err = std::labs(bb - static_cast<long>(bs * budget)) +
                   std::labs(hd - static_cast<long>(hs * budget));
        if (best_err < 0 || err < best_err) {
          best_err = err;
          best = cfg;
        }
      }
    }
    long total = toy_param_count(best);
    if (std::labs(total - budget) > budget / 10)
      throw ContractViolation("reallocation_variants: infeasible budget");
    out.push_back(best);
  }
  return out;
}

}  // namespace odr
