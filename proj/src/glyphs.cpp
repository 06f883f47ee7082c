#include "nettrim/datagen.hpp"

#include "nettrim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>

namespace nettrim {

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4 || images.dim(1) != 1) {
    throw std::invalid_argument("dataset: images must be [N,1,H,W]");
  }
  if (static_cast<std::int64_t>(labels.size()) != images.dim(0)) {
    throw std::invalid_argument("dataset: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(images.dim(0)) + " images");
  }
  std::map<std::int64_t, std::int64_t> hist;
  for (auto l : labels) {
    if (l < 0 || l >= num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(l) + " out of range");
    }
    ++hist[l];
  }
  for (std::int64_t c = 0; c < num_classes; ++c) {
    if (hist[c] < 10) {
      throw std::invalid_argument("dataset: class " + std::to_string(c) + " has only " +
                                  std::to_string(hist[c]) + " samples (need >= 10)");
    }
  }
}

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kSide = 28;

struct Vec2 {
  double x = 0, y = 0;
};

double seg_dist(Vec2 p, Vec2 a, Vec2 b) {
  const double abx = b.x - a.x, aby = b.y - a.y;
  const double apx = p.x - a.x, apy = p.y - a.y;
  const double denom = abx * abx + aby * aby;
  double t = denom > 0 ? (apx * abx + apy * aby) / denom : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = apx - t * abx, dy = apy - t * aby;
  return std::sqrt(dx * dx + dy * dy);
}

// Stroke response: 1 inside the stroke, linear falloff over the antialias band.
double stroke(double d, double t, double aa = 0.06) {
  if (d <= t) return 1.0;
  if (d >= t + aa) return 0.0;
  return (t + aa - d) / aa;
}

struct Glyph {
  // Distance from canonical glyph geometry; combined with thickness by the
  // renderer.  Each shape returns its final intensity directly.
  virtual double intensity(Vec2 p) const = 0;
  virtual ~Glyph() = default;
};

struct Disk final : Glyph {
  double radius;
  explicit Disk(double r) : radius(r) {}
  double intensity(Vec2 p) const override {
    return stroke(std::sqrt(p.x * p.x + p.y * p.y), radius);
  }
};

struct Ring final : Glyph {
  double radius, thick;
  Ring(double r, double t) : radius(r), thick(t) {}
  double intensity(Vec2 p) const override {
    const double d = std::abs(std::sqrt(p.x * p.x + p.y * p.y) - radius);
    return stroke(d, thick);
  }
};

struct Segments final : Glyph {
  std::vector<std::pair<Vec2, Vec2>> segs;
  double thick;
  Segments(std::vector<std::pair<Vec2, Vec2>> s, double t) : segs(std::move(s)), thick(t) {}
  double intensity(Vec2 p) const override {
    double best = 1e9;
    for (const auto& [a, b] : segs) best = std::min(best, seg_dist(p, a, b));
    return stroke(best, thick);
  }
};

// Regular polygon outline with n vertices on a circle of the given radius.
Segments polygon(int n, double radius, double thick, double phase = 0.0) {
  std::vector<std::pair<Vec2, Vec2>> segs;
  for (int i = 0; i < n; ++i) {
    const double a0 = phase + 2.0 * kPi * i / n;
    const double a1 = phase + 2.0 * kPi * (i + 1) / n;
    segs.push_back({{radius * std::cos(a0), radius * std::sin(a0)},
                    {radius * std::cos(a1), radius * std::sin(a1)}});
  }
  return Segments(std::move(segs), thick);
}

struct Arc final : Glyph {
  double radius, thick, extent, phase;  // extent in radians, centered at `phase`
  Arc(double r, double t, double e, double ph = 0.0)
      : radius(r), thick(t), extent(e), phase(ph) {}
  double intensity(Vec2 p) const override {
    const double len = std::sqrt(p.x * p.x + p.y * p.y);
    double ang = std::atan2(p.y, p.x) - phase;
    while (ang > kPi) ang -= 2.0 * kPi;
    while (ang < -kPi) ang += 2.0 * kPi;
    if (std::abs(ang) <= extent / 2.0) {
      return stroke(std::abs(len - radius), thick);
    }
    // Off the angular span: distance to the nearer endpoint.
    const double half = extent / 2.0;
    const Vec2 e0{radius * std::cos(phase + half), radius * std::sin(phase + half)};
    const Vec2 e1{radius * std::cos(phase - half), radius * std::sin(phase - half)};
    const double d0 = std::hypot(p.x - e0.x, p.y - e0.y);
    const double d1 = std::hypot(p.x - e1.x, p.y - e1.y);
    return stroke(std::min(d0, d1), thick);
  }
};

struct TwoDisks final : Glyph {
  double offset, radius, angle;
  TwoDisks(double o, double r, double a = 0.0) : offset(o), radius(r), angle(a) {}
  double intensity(Vec2 p) const override {
    const double cx = offset * std::cos(angle), cy = offset * std::sin(angle);
    const double d0 = std::hypot(p.x - cx, p.y - cy);
    const double d1 = std::hypot(p.x + cx, p.y + cy);
    return stroke(std::min(d0, d1), radius);
  }
};

// Glyph parameters are drawn per sample from `rng`, giving intra-class jitter
// on top of the affine warp applied by the renderer.  The source families get
// random phases wherever the phase is not the class identity itself, so the
// backbone is forced to learn orientation-robust edge/corner/curvature
// detectors instead of pixel templates.
std::unique_ptr<Glyph> make_glyph(const std::string& difficulty, std::int64_t label,
                                  Rng& rng) {
  if (difficulty == "easy") {
    // Two maximally separated families.
    if (label == 0) return std::make_unique<Disk>(0.55);
    return std::make_unique<Segments>(
        Segments({{{-0.6, -0.6}, {0.6, 0.6}}, {{-0.6, 0.6}, {0.6, -0.6}}}, 0.12));
  }
  if (difficulty == "source") {
    // The families span the axes the backbone must generalize along: corner
    // count (polygons 3/4/6 plus curved disk/ring), angular extent (arcs 90
    // and 270 degrees plus the closed ring), stroke orientation (bar/cross/X)
    // and fill vs outline (disk vs ring).
    switch (label) {
      case 0: return std::make_unique<Disk>(0.55);
      case 1: return std::make_unique<Ring>(0.55, 0.09);
      case 2: return std::make_unique<Segments>(Segments({{{-0.65, 0}, {0.65, 0}}}, 0.13));
      case 3:
        return std::make_unique<Segments>(
            Segments({{{-0.6, 0}, {0.6, 0}}, {{0, -0.6}, {0, 0.6}}}, 0.11));
      case 4:
        return std::make_unique<Segments>(
            Segments({{{-0.55, -0.55}, {0.55, 0.55}}, {{-0.55, 0.55}, {0.55, -0.55}}}, 0.11));
      case 5:
        return std::make_unique<Segments>(
            polygon(3, 0.62, 0.08, rng.uniform(0.0, 2.0 * kPi / 3.0)));
      case 6:
        return std::make_unique<Segments>(
            polygon(4, 0.62, 0.08, rng.uniform(0.0, kPi / 2.0)));
      case 7:
        return std::make_unique<Segments>(
            polygon(6, 0.62, 0.08, rng.uniform(0.0, kPi / 3.0)));
      case 8:
        return std::make_unique<Arc>(0.55, 0.09, kPi / 2.0, rng.uniform(0.0, 2.0 * kPi));
      default:
        return std::make_unique<Arc>(0.55, 0.07, 1.5 * kPi, rng.uniform(0.0, 2.0 * kPi));
    }
  }
  if (difficulty == "hard") {
    // Fine geometry: polygon vertex counts 3..6, then arcs of graded angular
    // extent in 45-degree steps.  High intra-class jitter: random phase (over
    // each polygon's symmetry period / the full circle for arcs), radius and
    // stroke wobble, and arc thickness scaled to keep total ink roughly
    // constant so pixel-sum cues do not give the classes away.
    if (label < 4) {
      const int n = static_cast<int>(label) + 3;
      const double phase = rng.uniform(0.0, 2.0 * kPi / n);
      const double radius = rng.uniform(0.56, 0.64);
      const double thick = rng.uniform(0.06, 0.08);
      return std::make_unique<Segments>(polygon(n, radius, thick, phase));
    }
    const double extent_deg = 60.0 + 45.0 * static_cast<double>(label - 4);  // 60..285
    const double extent = extent_deg * kPi / 180.0;
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double radius = rng.uniform(0.5, 0.62);
    const double thick =
        std::min(0.07 * (kPi / extent), 0.22) * rng.uniform(0.85, 1.15);
    return std::make_unique<Arc>(radius, thick, extent, phase);
  }
  throw std::invalid_argument("gen_task: unknown difficulty '" + difficulty + "'");
}

void render_sample(float* out, const std::string& difficulty, std::int64_t label, Rng rng) {
  const auto glyph = make_glyph(difficulty, label, rng);
  // Affine jitter: +-10% scale, +-15 degrees rotation, small translation.
  const double scale = rng.uniform(0.9, 1.1);
  const double rot = rng.uniform(-kPi / 12.0, kPi / 12.0);
  const double tx = rng.uniform(-0.08, 0.08);
  const double ty = rng.uniform(-0.08, 0.08);
  const double c = std::cos(rot), s = std::sin(rot);
  for (int i = 0; i < kSide; ++i) {
    for (int j = 0; j < kSide; ++j) {
      const double u = (j + 0.5) / kSide * 2.0 - 1.0;
      const double v = (i + 0.5) / kSide * 2.0 - 1.0;
      // Map the canvas point back into canonical glyph coordinates.
      const double px = (u - tx) / scale, py = (v - ty) / scale;
      const Vec2 p{c * px + s * py, -s * px + c * py};
      double val = glyph->intensity(p);
      val += rng.uniform(0.0, 0.1);  // additive noise, amplitude 0.1
      out[i * kSide + j] = static_cast<float>(std::clamp(val, 0.0, 1.0));
    }
  }
}

Dataset gen_split(const std::string& difficulty, const std::string& split, std::int64_t n,
                  std::int64_t num_classes, std::uint64_t seed) {
  Dataset d;
  d.images = TensorF(Shape{n, 1, kSide, kSide});
  d.labels.resize(static_cast<std::size_t>(n));
  d.num_classes = num_classes;
  d.split = split;
  Rng root = Rng(seed).split(difficulty).split(split);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t label = i % num_classes;  // balanced within +-1
    d.labels[static_cast<std::size_t>(i)] = label;
    render_sample(d.images.data() + i * kSide * kSide, difficulty, label,
                  root.split(static_cast<std::uint64_t>(i)));
  }
  d.validate();
  return d;
}

}  // namespace

std::int64_t task_class_count(const std::string& difficulty) {
  if (difficulty == "easy") return 2;
  if (difficulty == "source" || difficulty == "hard") return 10;
  throw std::invalid_argument("gen_task: unknown difficulty '" + difficulty + "'");
}

TaskData gen_task(const std::string& difficulty, std::int64_t n_train, std::int64_t n_test,
                  std::uint64_t seed) {
  const std::int64_t classes = task_class_count(difficulty);
  if (n_train < 10 * classes || n_test < 10 * classes) {
    throw std::invalid_argument("gen_task: need at least " + std::to_string(10 * classes) +
                                " samples per split for " + std::to_string(classes) +
                                " classes");
  }
  TaskData task;
  task.difficulty = difficulty;
  task.seed = seed;
  task.train = gen_split(difficulty, "train", n_train, classes, seed);
  task.test = gen_split(difficulty, "test", n_test, classes, seed);
  return task;
}

}  // namespace nettrim
