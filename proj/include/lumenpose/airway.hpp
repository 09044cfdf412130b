#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lumenpose/errors.hpp"
#include "lumenpose/pose.hpp"
#include "lumenpose/rng.hpp"

namespace lumenpose {

enum class LobeLabel { UpperRight, LowerRight, UpperLeft, LowerLeft };

inline const std::vector<LobeLabel>& all_lobes() {
  static const std::vector<LobeLabel> lobes = {LobeLabel::UpperRight, LobeLabel::LowerRight,
                                               LobeLabel::UpperLeft, LobeLabel::LowerLeft};
  return lobes;
}

inline std::string to_string(LobeLabel l) {
  switch (l) {
    case LobeLabel::UpperRight: return "upper_right";
    case LobeLabel::LowerRight: return "lower_right";
    case LobeLabel::UpperLeft: return "upper_left";
    case LobeLabel::LowerLeft: return "lower_left";
  }
  return "?";
}

inline LobeLabel lobe_from_string(const std::string& s) {
  for (LobeLabel l : all_lobes())
    if (to_string(l) == s) return l;
  throw ConfigError("unknown lobe '" + s + "'");
}

// Procedural patient recipe. The tree is a pure function of this struct.
struct PatientSpec {
  std::uint64_t seed = 0;
  double scale = 64.0;        // trachea length, voxels
  int branching_levels = 4;   // deepest generation, in [4, 6]
  double angle_jitter = 0.14; // radians
  double radius_taper = 0.78; // radius ratio per generation, in (0, 1)

  void validate() const {
    if (!(scale > 0.0)) throw ConfigError("PatientSpec: scale must be positive");
    if (branching_levels < 4 || branching_levels > 6)
      throw ConfigError("PatientSpec: branching_levels must be in [4, 6]");
    if (!(radius_taper > 0.0 && radius_taper < 1.0))
      throw ConfigError("PatientSpec: radius_taper must be in (0, 1)");
    if (!(angle_jitter >= 0.0 && angle_jitter < 0.6))
      throw ConfigError("PatientSpec: angle_jitter must be in [0, 0.6)");
  }
};

struct Branch {
  int id = 0;
  int parent_id = -1;  // -1 for the trachea
  Vec3 start, end;
  double start_radius = 0.0, end_radius = 0.0;
  int level = 0;  // trachea = 0
  std::optional<LobeLabel> lobe;  // unset for trachea and main bronchi
};

struct AirwayTree {
  PatientSpec spec;
  std::vector<Branch> branches;

  const Branch& root() const { return branches.front(); }

  std::vector<int> children_of(int id) const {
    std::vector<int> out;
    for (const Branch& b : branches)
      if (b.parent_id == id) out.push_back(b.id);
    return out;
  }

  std::vector<int> terminal_branches(LobeLabel lobe) const {
    std::vector<bool> has_child(branches.size(), false);
    for (const Branch& b : branches)
      if (b.parent_id >= 0) has_child[static_cast<std::size_t>(b.parent_id)] = true;
    std::vector<int> out;
    for (const Branch& b : branches)
      if (!has_child[static_cast<std::size_t>(b.id)] && b.lobe && *b.lobe == lobe)
        out.push_back(b.id);
    return out;
  }

  int max_level() const {
    int m = 0;
    for (const Branch& b : branches) m = std::max(m, b.level);
    return m;
  }

  // Structural invariants: single root, ids contiguous, connectivity,
  // positive non-increasing radii, four labelled lobes.
  void validate() const {
    if (branches.empty()) throw Error("AirwayTree: empty");
    int roots = 0;
    for (std::size_t i = 0; i < branches.size(); ++i) {
      const Branch& b = branches[i];
      if (b.id != static_cast<int>(i)) throw Error("AirwayTree: ids must be contiguous");
      if (b.parent_id < 0) {
        roots++;
        if (b.level != 0) throw Error("AirwayTree: root must be level 0");
      } else {
        const Branch& p = branches[static_cast<std::size_t>(b.parent_id)];
        if (b.parent_id >= b.id) throw Error("AirwayTree: parent must precede child");
        if (b.level != p.level + 1) throw Error("AirwayTree: child level must be parent + 1");
        if ((b.start - p.end).norm() != 0.0)
          throw Error("AirwayTree: child start must equal parent end");
        if (b.start_radius > p.end_radius + 1e-12)
          throw Error("AirwayTree: radii must be non-increasing with level");
      }
      if (!(b.start_radius > 0.0) || !(b.end_radius > 0.0))
        throw Error("AirwayTree: radii must be positive");
      if (b.end_radius > b.start_radius + 1e-12)
        throw Error("AirwayTree: radius must not grow along a branch");
      if ((b.end - b.start).norm() <= 0.0) throw Error("AirwayTree: zero-length branch");
    }
    if (roots != 1) throw Error("AirwayTree: expected a single root");
    for (LobeLabel l : all_lobes())
      if (terminal_branches(l).empty())
        throw Error("AirwayTree: missing lobe " + to_string(l));
  }
};

inline void to_json(nlohmann::json& j, const PatientSpec& s) {
  j = nlohmann::json{{"seed", s.seed},
                     {"scale", s.scale},
                     {"branching_levels", s.branching_levels},
                     {"angle_jitter", s.angle_jitter},
                     {"radius_taper", s.radius_taper}};
}

inline void from_json(const nlohmann::json& j, PatientSpec& s) {
  j.at("seed").get_to(s.seed);
  j.at("scale").get_to(s.scale);
  j.at("branching_levels").get_to(s.branching_levels);
  j.at("angle_jitter").get_to(s.angle_jitter);
  j.at("radius_taper").get_to(s.radius_taper);
}

inline void to_json(nlohmann::json& j, const Branch& b) {
  j = nlohmann::json{{"id", b.id},
                     {"parent_id", b.parent_id},
                     {"start", {b.start.x, b.start.y, b.start.z}},
                     {"end", {b.end.x, b.end.y, b.end.z}},
                     {"start_radius", b.start_radius},
                     {"end_radius", b.end_radius},
                     {"level", b.level}};
  if (b.lobe)
    j["lobe"] = to_string(*b.lobe);
  else
    j["lobe"] = nullptr;
}

inline void from_json(const nlohmann::json& j, Branch& b) {
  j.at("id").get_to(b.id);
  j.at("parent_id").get_to(b.parent_id);
  b.start = {j.at("start")[0].get<double>(), j.at("start")[1].get<double>(),
             j.at("start")[2].get<double>()};
  b.end = {j.at("end")[0].get<double>(), j.at("end")[1].get<double>(),
           j.at("end")[2].get<double>()};
  j.at("start_radius").get_to(b.start_radius);
  j.at("end_radius").get_to(b.end_radius);
  j.at("level").get_to(b.level);
  if (j.at("lobe").is_null())
    b.lobe.reset();
  else
    b.lobe = lobe_from_string(j.at("lobe").get<std::string>());
}

inline void to_json(nlohmann::json& j, const AirwayTree& t) {
  j = nlohmann::json{{"spec", t.spec}, {"branches", t.branches}};
}

inline void from_json(const nlohmann::json& j, AirwayTree& t) {
  j.at("spec").get_to(t.spec);
  j.at("branches").get_to(t.branches);
}

namespace detail {

inline Vec3 any_perpendicular(const Vec3& d) {
  // Axis least aligned with d, preference order y, x, z.
  Vec3 cands[3] = {{0, 1, 0}, {1, 0, 0}, {0, 0, 1}};
  Vec3 best = cands[0];
  double best_dot = std::abs(d.dot(cands[0]));
  for (int i = 1; i < 3; ++i) {
    double a = std::abs(d.dot(cands[i]));
    if (a < best_dot) {
      best = cands[i];
      best_dot = a;
    }
  }
  return (best - d * best.dot(d)).normalized();
}

struct GrowFrontier {
  int parent_id;
  Vec3 dir;
  double length;
  double radius;
  int level;
  int target_level;
  LobeLabel lobe;
};

}  // namespace detail

// Deterministic recursive bifurcation: trachea, two main bronchi, four
// labelled lobar subtrees grown to a per-lobe terminal level drawn uniformly
// in [4, branching_levels] (one lobe forced to the deepest level so the
// configured maximum is always attained).
inline AirwayTree generate_patient(const PatientSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0xa19f));

  AirwayTree tree;
  tree.spec = spec;
  auto add_branch = [&tree](int parent, const Vec3& start, const Vec3& end, double sr, double er,
                            int level, std::optional<LobeLabel> lobe) {
    Branch b;
    b.id = static_cast<int>(tree.branches.size());
    b.parent_id = parent;
    b.start = start;
    b.end = end;
    b.start_radius = sr;
    b.end_radius = er;
    b.level = level;
    b.lobe = lobe;
    tree.branches.push_back(b);
    return b.id;
  };

  const double taper = spec.radius_taper;
  const double r0 = spec.scale / 8.0;

  // Per-lobe terminal levels.
  int levels[4];
  for (int& l : levels) l = static_cast<int>(rng.uniform_int(4, spec.branching_levels));
  levels[rng.uniform_int(0, 3)] = spec.branching_levels;

  // Trachea descends -z from the origin.
  const Vec3 origin{0, 0, 0};
  const Vec3 down{0, 0, -1};
  int trachea = add_branch(-1, origin, origin + down * spec.scale, r0, r0 * taper, 0, std::nullopt);

  // Main bronchi in the xz plane.
  struct Main {
    int id;
    Vec3 dir;
    double length;
    double side;  // +1 right, -1 left
  };
  std::vector<Main> mains;
  for (double side : {+1.0, -1.0}) {
    const double theta = 0.55 + spec.angle_jitter * rng.uniform(-1.0, 1.0);
    Vec3 dir = (axis_angle_rotation({0, 1, 0}, side * theta) * down).normalized();
    const double len = spec.scale * (0.55 + 0.08 * rng.uniform(-1.0, 1.0));
    const Branch& t = tree.branches[static_cast<std::size_t>(trachea)];
    int id = add_branch(trachea, t.end, t.end + dir * len, t.end_radius, t.end_radius * taper, 1,
                        std::nullopt);
    mains.push_back({id, dir, len, side});
  }

  // Lobar bronchi: upper flares outward/up, lower continues down.
  std::vector<detail::GrowFrontier> frontier;
  int lobe_idx = 0;
  for (const Main& m : mains) {
    const Branch& mb = tree.branches[static_cast<std::size_t>(m.id)];
    const bool right = m.side > 0;
    for (bool upper : {true, false}) {
      LobeLabel lobe = right ? (upper ? LobeLabel::UpperRight : LobeLabel::LowerRight)
                             : (upper ? LobeLabel::UpperLeft : LobeLabel::LowerLeft);
      double phi = upper ? (0.85 + spec.angle_jitter * rng.uniform(-1.0, 1.0))
                         : (-0.30 + spec.angle_jitter * rng.uniform(-1.0, 1.0));
      Vec3 dir = (axis_angle_rotation({0, 1, 0}, m.side * phi) * m.dir).normalized();
      // Small out-of-plane twist.
      double twist = 0.25 * rng.uniform(-1.0, 1.0);
      dir = (axis_angle_rotation(m.dir, twist) * dir).normalized();
      double len = m.length * (0.72 + 0.08 * rng.uniform(-1.0, 1.0));
      int id = add_branch(m.id, mb.end, mb.end + dir * len, mb.end_radius, mb.end_radius * taper,
                          2, lobe);
      frontier.push_back({id, dir, len, mb.end_radius * taper, 2, levels[lobe_idx], lobe});
      lobe_idx++;
    }
  }

  // Generic bifurcation below the lobar level.
  while (!frontier.empty()) {
    detail::GrowFrontier f = frontier.back();
    frontier.pop_back();
    if (f.level >= f.target_level) continue;
    const Branch& pb = tree.branches[static_cast<std::size_t>(f.parent_id)];
    const double azimuth = rng.uniform(0.0, kTwoPi);
    Vec3 axis0 = detail::any_perpendicular(f.dir);
    Vec3 axis = (axis_angle_rotation(f.dir, azimuth) * axis0).normalized();
    for (double sgn : {+1.0, -1.0}) {
      const double half = 0.48 + spec.angle_jitter * rng.uniform(-1.0, 1.0);
      Vec3 dir = (axis_angle_rotation(axis, sgn * half) * f.dir).normalized();
      double len = std::max(3.0, f.length * (0.70 + 0.08 * rng.uniform(-1.0, 1.0)));
      double sr = pb.end_radius;
      int id = add_branch(f.parent_id, pb.end, pb.end + dir * len, sr, sr * taper, f.level + 1,
                          f.lobe);
      frontier.push_back({id, dir, len, sr * taper, f.level + 1, f.target_level, f.lobe});
    }
  }

  tree.validate();
  return tree;
}

// Exact signed distance to a round cone (the convex hull of the spheres
// (a, r1) and (b, r2)); negative inside.
inline double rounded_cone_distance(const Vec3& p, const Vec3& a, const Vec3& b, double r1,
                                    double r2) {
  const Vec3 ba = b - a;
  const double l2 = ba.dot(ba);
  const double rr = r1 - r2;
  const double a2 = l2 - rr * rr;
  if (a2 <= 0.0) {
    // One sphere swallows the other; distance to the larger sphere.
    const double da = (p - a).norm() - r1;
    const double db = (p - b).norm() - r2;
    return std::min(da, db);
  }
  const double il2 = 1.0 / l2;
  const Vec3 pa = p - a;
  const double y = pa.dot(ba);
  const double z = y - l2;
  const Vec3 xv = pa * l2 - ba * y;
  const double x2 = xv.dot(xv);
  const double y2 = y * y * l2;
  const double z2 = z * z * l2;
  const double sign_rr = rr < 0.0 ? -1.0 : (rr > 0.0 ? 1.0 : 0.0);
  const double k = sign_rr * rr * rr * x2;
  const double sign_z = z < 0.0 ? -1.0 : (z > 0.0 ? 1.0 : 0.0);
  const double sign_y = y < 0.0 ? -1.0 : (y > 0.0 ? 1.0 : 0.0);
  if (sign_z * a2 * z2 > k) return std::sqrt(x2 + z2) * il2 - r2;
  if (sign_y * a2 * y2 < k) return std::sqrt(x2 + y2) * il2 - r1;
  return (std::sqrt(x2 * a2 * il2) + y * rr) * il2 - r1;
}

// Signed distance to the whole tree (min over branch cones), accelerated by a
// bounding-volume hierarchy. Immutable after construction; safe for
// concurrent reads.
class AirwaySdf {
 public:
  explicit AirwaySdf(const AirwayTree& tree) : scale_(tree.spec.scale) {
    cones_.reserve(tree.branches.size());
    for (const Branch& b : tree.branches)
      cones_.push_back({b.start, b.end, b.start_radius, b.end_radius});
    std::vector<int> order(cones_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    root_ = build(order, 0, static_cast<int>(order.size()));
  }

  double operator()(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    int stack[64];
    int top = 0;
    stack[top++] = root_;
    while (top > 0) {
      const Node& n = nodes_[static_cast<std::size_t>(stack[--top])];
      if (aabb_distance(p, n.lo, n.hi) - n.max_radius >= best) continue;
      if (n.cone >= 0) {
        const Cone& c = cones_[static_cast<std::size_t>(n.cone)];
        best = std::min(best, rounded_cone_distance(p, c.a, c.b, c.r1, c.r2));
      } else {
        stack[top++] = n.left;
        stack[top++] = n.right;
      }
    }
    return best;
  }

  Vec3 gradient(const Vec3& p, double h = 1e-3) const {
    const AirwaySdf& f = *this;
    return {(f({p.x + h, p.y, p.z}) - f({p.x - h, p.y, p.z})) / (2 * h),
            (f({p.x, p.y + h, p.z}) - f({p.x, p.y - h, p.z})) / (2 * h),
            (f({p.x, p.y, p.z + h}) - f({p.x, p.y, p.z - h})) / (2 * h)};
  }

  double scale() const { return scale_; }

 private:
  struct Cone {
    Vec3 a, b;
    double r1, r2;
  };
  struct Node {
    Vec3 lo, hi;
    double max_radius = 0.0;
    int left = -1, right = -1;
    int cone = -1;
  };

  static double aabb_distance(const Vec3& p, const Vec3& lo, const Vec3& hi) {
    const double dx = std::max({lo.x - p.x, 0.0, p.x - hi.x});
    const double dy = std::max({lo.y - p.y, 0.0, p.y - hi.y});
    const double dz = std::max({lo.z - p.z, 0.0, p.z - hi.z});
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }

  int build(std::vector<int>& order, int begin, int end) {
    Node n;
    n.lo = {1e30, 1e30, 1e30};
    n.hi = {-1e30, -1e30, -1e30};
    for (int i = begin; i < end; ++i) {
      const Cone& c = cones_[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
      for (const Vec3& q : {c.a, c.b}) {
        n.lo = {std::min(n.lo.x, q.x), std::min(n.lo.y, q.y), std::min(n.lo.z, q.z)};
        n.hi = {std::max(n.hi.x, q.x), std::max(n.hi.y, q.y), std::max(n.hi.z, q.z)};
      }
      n.max_radius = std::max(n.max_radius, std::max(c.r1, c.r2));
    }
    if (end - begin == 1) {
      n.cone = order[static_cast<std::size_t>(begin)];
      nodes_.push_back(n);
      return static_cast<int>(nodes_.size() - 1);
    }
    const Vec3 ext = n.hi - n.lo;
    const int axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
    const int mid = (begin + end) / 2;
    std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                     [this, axis](int ia, int ib) {
                       const Cone& ca = cones_[static_cast<std::size_t>(ia)];
                       const Cone& cb = cones_[static_cast<std::size_t>(ib)];
                       return (ca.a[axis] + ca.b[axis]) < (cb.a[axis] + cb.b[axis]);
                     });
    n.left = build(order, begin, mid);
    n.right = build(order, mid, end);
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size() - 1);
  }

  std::vector<Cone> cones_;
  std::vector<Node> nodes_;
  int root_ = -1;
  double scale_;
};

inline double signed_distance(const AirwayTree& tree, const Vec3& point) {
  return AirwaySdf(tree)(point);
}

// Arc-length parameterized centerline: a uniform Catmull-Rom spline through
// branch axis points with a dense chord-length table and parallel-transported
// up references.
class NavigationPath {
 public:
  static NavigationPath from_points(std::vector<Vec3> pts, int samples_per_segment = 64) {
    if (pts.size() < 2) throw PreconditionError("NavigationPath needs at least 2 points");
    NavigationPath p;
    p.pts_ = std::move(pts);
    p.build_table(samples_per_segment);
    return p;
  }

  double total_length() const { return s_.back(); }
  const std::vector<Vec3>& control_points() const { return pts_; }
  const std::vector<double>& arclen_samples() const { return s_; }

  Vec3 point_at(double s) const { return eval(t_of_s(s)); }

  Vec3 tangent_at(double s) const { return eval_deriv(t_of_s(s)).normalized(); }

  // Parallel-transported reference, re-orthogonalized against the local
  // tangent. Continuous in s (no frame flips).
  Vec3 up_reference_at(double s) const {
    const auto [k, lam] = locate(s);
    Vec3 n = normals_[k] * (1.0 - lam) + normals_[k + 1] * lam;
    Vec3 t = tangent_at(s);
    Vec3 u = n - t * n.dot(t);
    const double nn = u.norm();
    if (nn < 1e-9) {
      u = detail::any_perpendicular(t);
      return u;
    }
    return u / nn;
  }

 private:
  // Catmull-Rom over the padded control polygon; global parameter
  // t in [0, nseg], segment i covers [i, i+1].
  Vec3 ctrl(std::ptrdiff_t i) const {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(pts_.size());
    if (i < 0) return pts_[0] * 2.0 - pts_[1];
    if (i >= n) return pts_[static_cast<std::size_t>(n - 1)] * 2.0 -
                       pts_[static_cast<std::size_t>(n - 2)];
    return pts_[static_cast<std::size_t>(i)];
  }

  Vec3 eval(double t) const {
    const std::ptrdiff_t nseg = static_cast<std::ptrdiff_t>(pts_.size()) - 1;
    std::ptrdiff_t seg = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(t)), 0,
                                                    nseg - 1);
    const double u = t - static_cast<double>(seg);
    const Vec3 p0 = ctrl(seg - 1), p1 = ctrl(seg), p2 = ctrl(seg + 1), p3 = ctrl(seg + 2);
    return (p1 * 2.0 + (p2 - p0) * u + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * (u * u) +
            (p1 * 3.0 - p0 - p2 * 3.0 + p3) * (u * u * u)) *
           0.5;
  }

  Vec3 eval_deriv(double t) const {
    const std::ptrdiff_t nseg = static_cast<std::ptrdiff_t>(pts_.size()) - 1;
    std::ptrdiff_t seg = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(t)), 0,
                                                    nseg - 1);
    const double u = t - static_cast<double>(seg);
    const Vec3 p0 = ctrl(seg - 1), p1 = ctrl(seg), p2 = ctrl(seg + 1), p3 = ctrl(seg + 2);
    return ((p2 - p0) + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * (2.0 * u) +
            (p1 * 3.0 - p0 - p2 * 3.0 + p3) * (3.0 * u * u)) *
           0.5;
  }

  void build_table(int samples_per_segment) {
    const std::size_t nseg = pts_.size() - 1;
    const std::size_t n = nseg * static_cast<std::size_t>(samples_per_segment) + 1;
    t_.reserve(n);
    s_.reserve(n);
    normals_.reserve(n);
    double s_acc = 0.0;
    Vec3 prev;
    for (std::size_t i = 0; i < n; ++i) {
      const double t =
          static_cast<double>(i) / static_cast<double>(samples_per_segment);
      const Vec3 p = eval(t);
      if (i > 0) {
        const double step = (p - prev).norm();
        if (step <= 0.0) continue;  // collapse duplicate samples
        s_acc += step;
      }
      t_.push_back(t);
      s_.push_back(s_acc);
      prev = p;
    }
    // Parallel transport of the initial perpendicular.
    Vec3 t0 = eval_deriv(t_[0]).normalized();
    Vec3 nrm = detail::any_perpendicular(t0);
    normals_.push_back(nrm);
    for (std::size_t i = 1; i < t_.size(); ++i) {
      Vec3 ti = eval_deriv(t_[i]).normalized();
      Vec3 cand = nrm - ti * nrm.dot(ti);
      if (cand.norm() > 1e-12) nrm = cand.normalized();
      normals_.push_back(nrm);
    }
  }

  std::pair<std::size_t, double> locate(double s) const {
    const double sc = std::clamp(s, 0.0, s_.back());
    auto it = std::upper_bound(s_.begin(), s_.end(), sc);
    std::size_t k = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(it - s_.begin() - 1, 0,
                                   static_cast<std::ptrdiff_t>(s_.size()) - 2));
    const double span = s_[k + 1] - s_[k];
    const double lam = span > 0.0 ? (sc - s_[k]) / span : 0.0;
    return {k, lam};
  }

  double t_of_s(double s) const {
    const auto [k, lam] = locate(s);
    return t_[k] + lam * (t_[k + 1] - t_[k]);
  }

  std::vector<Vec3> pts_;
  std::vector<double> t_, s_;
  std::vector<Vec3> normals_;
};

// Central path of a lobe: trachea entrance to a seeded terminal branch,
// through start/mid points of every branch on the chain.
inline NavigationPath centerline_path(const AirwayTree& tree, LobeLabel lobe,
                                      std::uint64_t rng_seed) {
  std::vector<int> terminals = tree.terminal_branches(lobe);
  if (terminals.empty())
    throw PreconditionError("centerline_path: tree has no terminal branch for lobe " +
                            to_string(lobe));
  Rng rng(derive_seed(rng_seed, 0x70a7));
  int leaf = terminals[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(terminals.size()) - 1))];
  std::vector<int> chain;
  for (int id = leaf; id >= 0; id = tree.branches[static_cast<std::size_t>(id)].parent_id)
    chain.push_back(id);
  std::reverse(chain.begin(), chain.end());
  std::vector<Vec3> pts;
  for (int id : chain) {
    const Branch& b = tree.branches[static_cast<std::size_t>(id)];
    pts.push_back(b.start);
    pts.push_back((b.start + b.end) * 0.5);
  }
  pts.push_back(tree.branches[static_cast<std::size_t>(chain.back())].end);
  return NavigationPath::from_points(std::move(pts));
}

namespace detail {

// Camera frame from eye, target and an up hint; look-at is the x axis of the
// resulting rotation (first column), up is the z axis.
inline Pose camera_frame(const Vec3& eye, const Vec3& target, const Vec3& up_hint, double roll) {
  Vec3 f = (target - eye).normalized();
  Vec3 u = up_hint - f * up_hint.dot(f);
  if (u.norm() < 1e-9) u = any_perpendicular(f);
  u = u.normalized();
  // Roll about the look-at direction.
  u = u * std::cos(roll) + f.cross(u) * std::sin(roll);
  Mat3 r = Mat3::from_columns(f, u.cross(f), u);
  return Pose{eye, rotation_to_euler(r)};
}

}  // namespace detail

// Camera on the central path: position p(s), look-at toward p(s + delta_d),
// up from the transported reference rotated by roll about the view direction.
inline Pose camera_pose_at(const NavigationPath& path, double s, double delta_d, double roll) {
  if (!(delta_d > 0.0)) throw PreconditionError("camera_pose_at: delta_d must be positive");
  if (s < 0.0 || s > path.total_length() - delta_d)
    throw PreconditionError("camera_pose_at: s out of range [0, total_length - delta_d]");
  const Vec3 eye = path.point_at(s);
  const Vec3 target = path.point_at(s + delta_d);
  return detail::camera_frame(eye, target, path.up_reference_at(s), roll);
}

struct OffsetCamera {
  Pose pose;
  bool clamped = false;
};

// Off-axis variant used by trajectory synthesis: the eye is displaced by
// `offset` while the look-at target stays on the central path. An offset that
// leaves the lumen is pulled back along the SDF gradient until
// signed_distance <= -0.5 voxel.
inline OffsetCamera camera_pose_at_offset(const NavigationPath& path, const AirwaySdf& sdf,
                                          double s, double delta_d, double roll,
                                          const Vec3& offset) {
  if (!(delta_d > 0.0)) throw PreconditionError("camera_pose_at_offset: delta_d must be positive");
  if (s < 0.0 || s > path.total_length() - delta_d)
    throw PreconditionError("camera_pose_at_offset: s out of range");
  const Vec3 center = path.point_at(s);
  Vec3 eye = center + offset;
  bool clamped = false;
  const double clearance = -0.5;
  if (sdf(eye) > clearance) {
    clamped = true;
    for (int iter = 0; iter < 16 && sdf(eye) > clearance; ++iter) {
      const Vec3 g = sdf.gradient(eye);
      const double gn = g.norm();
      if (gn < 1e-12) break;
      eye -= g * ((sdf(eye) - clearance) / gn);
    }
    if (sdf(eye) > clearance) eye = center;  // always inside on the centerline
  }
  const Vec3 target = path.point_at(s + delta_d);
  Pose pose = detail::camera_frame(eye, target, path.up_reference_at(s), roll);
  return {pose, clamped};
}

}  // namespace lumenpose
