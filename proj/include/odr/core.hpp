#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "odr/tensor.hpp"

namespace odr {

struct ContractViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Image with pixel values in [0,1], layout channels x height x width.
struct PixelImage {
  Tensor data;
  std::string id;

  PixelImage() = default;
  PixelImage(Tensor d, std::string image_id) : data(std::move(d)), id(std::move(image_id)) {
    validate();
  }

  void validate() const {
    if (data.shape().size() != 3) throw ContractViolation("PixelImage: rank must be 3");
    int ch = data.c();
    if (ch != 1 && ch != 3) throw ContractViolation("PixelImage: channels must be 1 or 3");
    if (data.h() < 1 || data.w() < 1) throw ContractViolation("PixelImage: empty spatial dims");
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!(data[i] >= 0.0 && data[i] <= 1.0))
        throw ContractViolation("PixelImage: pixel outside [0,1]");
  }
};

/// Axis-aligned box, corner format, continuous coordinates.
struct Box {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
  double area() const { return (xmax - xmin) * (ymax - ymin); }
  double cx() const { return 0.5 * (xmin + xmax); }
  double cy() const { return 0.5 * (ymin + ymax); }
};

struct GroundTruthSet {
  std::vector<Box> boxes;
  std::vector<int> labels;

  int K() const { return static_cast<int>(boxes.size()); }

  void validate(double height, double width) const {
    if (boxes.size() != labels.size()) throw ContractViolation("GroundTruthSet: length mismatch");
    for (const Box& b : boxes) {
      if (!(b.xmin < b.xmax && b.ymin < b.ymax))
        throw ContractViolation("GroundTruthSet: degenerate box");
      if (b.xmin < 0 || b.ymin < 0 || b.xmax > width || b.ymax > height)
        throw ContractViolation("GroundTruthSet: box out of image bounds");
    }
  }
};

struct DetectionSet {
  std::vector<Box> boxes;
  std::vector<int> labels;
  std::vector<double> scores;

  int size() const { return static_cast<int>(boxes.size()); }

  void validate() const {
    if (boxes.size() != labels.size() || boxes.size() != scores.size())
      throw ContractViolation("DetectionSet: length mismatch");
    for (double s : scores)
      if (!(s >= 0.0 && s <= 1.0)) throw ContractViolation("DetectionSet: score outside [0,1]");
  }
};

/// l-inf attack budget. epsilon lives on the 0-255 scale and is applied as
/// epsilon/255 in [0,1] pixel space; step size alpha = alpha_fraction * eps.
struct AttackBudget {
  int epsilon = 8;
  double alpha_fraction = 0.25;
  int steps = 20;

  void validate() const {
    if (epsilon < 0 || epsilon > 255) throw ContractViolation("AttackBudget: epsilon outside [0,255]");
    if (steps < 1) throw ContractViolation("AttackBudget: steps must be >= 1");
    if (!(alpha_fraction > 0)) throw ContractViolation("AttackBudget: alpha_fraction must be > 0");
  }

  double eps01() const { return epsilon / 255.0; }
  double alpha01() const { return alpha_fraction * eps01(); }
};

struct Perturbation {
  Tensor delta;
};

struct PerInstanceLosses {
  std::vector<double> cls;
  std::vector<double> reg;

  int K() const { return static_cast<int>(cls.size()); }

  void validate() const {
    if (cls.size() != reg.size()) throw ContractViolation("PerInstanceLosses: length mismatch");
    for (double v : cls)
      if (!std::isfinite(v) || v < 0) throw ContractViolation("PerInstanceLosses: bad cls loss");
    for (double v : reg)
      if (!std::isfinite(v) || v < 0) throw ContractViolation("PerInstanceLosses: bad reg loss");
  }
};

// ---------------------------------------------------------------------------
// Budget projection
// ---------------------------------------------------------------------------

/// Clamp delta into the l-inf ball of radius eps/255, then clamp x+delta
/// into [0,1] (delta <- clamp(x+delta,0,1) - x). Idempotent.
inline Perturbation project_to_budget(const Perturbation& delta, const PixelImage& x,
                                      const AttackBudget& budget) {
  budget.validate();
  if (!delta.delta.same_shape(x.data))
    throw ContractViolation("project_to_budget: shape mismatch");
  double eps = budget.eps01();
  Perturbation out = delta;
  for (std::size_t i = 0; i < out.delta.size(); ++i) {
    double d = std::clamp(out.delta[i], -eps, eps);
    d = std::clamp(x.data[i] + d, 0.0, 1.0) - x.data[i];
    out.delta[i] = d;
  }
  return out;
}

/// x_adv = x + delta. delta must already satisfy the projection invariants.
inline PixelImage apply_perturbation(const PixelImage& x, const Perturbation& delta,
                                     const AttackBudget& budget) {
  if (!delta.delta.same_shape(x.data))
    throw ContractViolation("apply_perturbation: shape mismatch");
  double eps = budget.eps01();
  const double tol = 4.0 * std::numeric_limits<double>::epsilon();
  Tensor out = x.data;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double d = delta.delta[i];
    if (std::fabs(d) > eps + tol)
      throw ContractViolation("apply_perturbation: delta exceeds budget");
    double v = x.data[i] + d;
    if (v < -tol || v > 1.0 + tol)
      throw ContractViolation("apply_perturbation: pixel leaves [0,1]");
    v = std::clamp(v, 0.0, 1.0);
    // x + d rounds at the pixel's magnitude, which can overshoot the eps ball
    // by a few ulp of 1.0; snap back so |out - x| <= eps holds exactly.
    while (v - x.data[i] > eps) v = std::nextafter(v, x.data[i]);
    while (x.data[i] - v > eps) v = std::nextafter(v, x.data[i]);
    out[i] = v;
  }
  return PixelImage(std::move(out), x.id);
}

// ---------------------------------------------------------------------------
// Detector contract
// ---------------------------------------------------------------------------

/// Named parameter tensor tagged with the group it belongs to.
struct Param {
  std::string name;
  std::string group;  // "backbone" or "head"
  Tensor value;
  Tensor grad;
};

enum class ObjectiveKind { CLS, REG, VANILLA, CWA, MTD };

/// Contract every detector must satisfy. input_gradient must be the true
/// gradient of the scalar objective through the full model (adaptive-attack
/// requirement); parameter group tags partition all trainable parameters.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual PerInstanceLosses losses(const PixelImage& x, const GroundTruthSet& gt) const = 0;
  virtual DetectionSet detect(const PixelImage& x) const = 0;

  /// Gradient of objective_value(kind, losses(x,gt)) w.r.t. input pixels.
  virtual Tensor input_gradient(ObjectiveKind kind, const PixelImage& x,
                                const GroundTruthSet& gt) const = 0;

  /// One backward pass producing both the input gradient and parameter
  /// gradients (accumulated into Param::grad). Used by training.
  virtual Tensor backward(ObjectiveKind kind, const PixelImage& x, const GroundTruthSet& gt) = 0;

  virtual std::vector<Param>& params() = 0;
  virtual const std::vector<Param>& params() const = 0;

  int num_classes_hint() const { return num_classes_; }

 protected:
  int num_classes_ = 0;
};

// ---------------------------------------------------------------------------
// Serialization: line-delimited box records and the image array container
// ---------------------------------------------------------------------------

inline std::string format_sig(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

/// "image_id class xmin ymin xmax ymax" per line.
inline void write_gt_records(std::ostream& os, const std::string& image_id,
                             const GroundTruthSet& gt) {
  for (int i = 0; i < gt.K(); ++i) {
    const Box& b = gt.boxes[i];
    os << image_id << ' ' << gt.labels[i] << ' ' << format_sig(b.xmin) << ' '
       << format_sig(b.ymin) << ' ' << format_sig(b.xmax) << ' ' << format_sig(b.ymax) << '\n';
  }
}

/// "image_id class xmin ymin xmax ymax score" per line.
inline void write_det_records(std::ostream& os, const std::string& image_id,
                              const DetectionSet& det) {
  for (int i = 0; i < det.size(); ++i) {
    const Box& b = det.boxes[i];
    os << image_id << ' ' << det.labels[i] << ' ' << format_sig(b.xmin) << ' '
       << format_sig(b.ymin) << ' ' << format_sig(b.xmax) << ' ' << format_sig(b.ymax) << ' '
       << format_sig(det.scores[i]) << '\n';
  }
}

inline std::map<std::string, GroundTruthSet> read_gt_records(std::istream& is) {
  std::map<std::string, GroundTruthSet> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    int label;
    Box b;
    if (!(ls >> id >> label >> b.xmin >> b.ymin >> b.xmax >> b.ymax))
      throw ContractViolation("read_gt_records: malformed line: " + line);
    out[id].boxes.push_back(b);
    out[id].labels.push_back(label);
  }
  return out;
}

inline std::map<std::string, DetectionSet> read_det_records(std::istream& is) {
  std::map<std::string, DetectionSet> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    int label;
    Box b;
    double score;
    if (!(ls >> id >> label >> b.xmin >> b.ymin >> b.xmax >> b.ymax >> score))
      throw ContractViolation("read_det_records: malformed line: " + line);
    out[id].boxes.push_back(b);
    out[id].labels.push_back(label);
    out[id].scores.push_back(score);
  }
  return out;
}

// Binary container for image arrays: magic, then per image the id,
// shape and raw doubles. Lossless round-trip by construction.
inline void write_images(std::ostream& os, const std::vector<PixelImage>& images) {
  const char magic[8] = {'O', 'D', 'I', 'M', 'G', '1', 0, 0};
  os.write(magic, 8);
  std::uint64_t n = images.size();
  os.write(reinterpret_cast<const char*>(&n), 8);
  for (const PixelImage& im : images) {
    std::uint64_t idlen = im.id.size();
    os.write(reinterpret_cast<const char*>(&idlen), 8);
    os.write(im.id.data(), static_cast<std::streamsize>(idlen));
    std::int32_t c = im.data.c(), h = im.data.h(), w = im.data.w();
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(im.data.data()),
             static_cast<std::streamsize>(im.data.size() * sizeof(double)));
  }
}

inline std::vector<PixelImage> read_images(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 6) != "ODIMG1")
    throw ContractViolation("read_images: bad magic");
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 8);
  std::vector<PixelImage> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint64_t idlen = 0;
    is.read(reinterpret_cast<char*>(&idlen), 8);
    std::string id(idlen, '\0');
    is.read(id.data(), static_cast<std::streamsize>(idlen));
    std::int32_t c, h, w;
    is.read(reinterpret_cast<char*>(&c), 4);
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&w), 4);
    Tensor t({c, h, w});
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw ContractViolation("read_images: truncated file");
    out.emplace_back(std::move(t), std::move(id));
  }
  return out;
}

}  // namespace odr
