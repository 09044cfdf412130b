#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lumenpose/airway.hpp"
#include "lumenpose/errors.hpp"
#include "lumenpose/pose.hpp"
#include "lumenpose/render.hpp"
#include "lumenpose/rng.hpp"

namespace lumenpose {

// ---- deterministic JSON helpers -------------------------------------------

// All floating point numbers in dataset files are written with 17 significant
// digits so that parsing them back reproduces the exact double.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class J>
void dump_json_g17(const J& j, std::string& out, int indent, int depth) {
  auto pad = [&](int d) {
    if (indent >= 0) {
      out.push_back('\n');
      out.append(static_cast<std::size_t>(indent * d), ' ');
    }
  };
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out.push_back('{');
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out.push_back(',');
        first = false;
        pad(depth + 1);
        out += nlohmann::json(it.key()).dump();
        out.push_back(':');
        if (indent >= 0) out.push_back(' ');
        dump_json_g17(it.value(), out, indent, depth + 1);
      }
      pad(depth);
      out.push_back('}');
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out.push_back('[');
      bool first = true;
      for (const auto& v : j) {
        if (!first) out.push_back(',');
        first = false;
        pad(depth + 1);
        dump_json_g17(v, out, indent, depth + 1);
      }
      pad(depth);
      out.push_back(']');
      return;
    }
    case nlohmann::json::value_t::number_float:
      out += format_g17(j.template get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

template <class J>
std::string dump_json_g17(const J& j, int indent = -1) {
  std::string out;
  dump_json_g17(j, out, indent, 0);
  if (indent >= 0) out.push_back('\n');
  return out;
}

inline std::string fnv1a64_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- variation grid --------------------------------------------------------

// One pose variation: an integer positional offset in voxels and a roll about
// the navigation vector. The central spec (zero offset, zero roll) is flagged.
struct VariationSpec {
  std::array<int, 3> offset{0, 0, 0};
  int roll_deg = 0;
  bool is_central = false;
};

inline bool operator==(const VariationSpec& a, const VariationSpec& b) {
  return a.offset == b.offset && a.roll_deg == b.roll_deg && a.is_central == b.is_central;
}

// The full grid: offsets [-2..2] per axis (125) x rolls {-45,-30,...,45} (7)
// = 875 specs, preceded by the central spec, 876 in total.
inline std::vector<VariationSpec> enumerate_variations() {
  std::vector<VariationSpec> out;
  out.reserve(876);
  out.push_back({{0, 0, 0}, 0, true});
  for (int x = -2; x <= 2; ++x)
    for (int y = -2; y <= 2; ++y)
      for (int z = -2; z <= 2; ++z)
        for (int roll = -45; roll <= 45; roll += 15)
          out.push_back({{x, y, z}, roll, false});
  return out;
}

// Neighbourhood used when combining variations: offsets differing by at most
// one voxel per axis and rolls by at most one 15-degree step.
inline bool grid_adjacent(const VariationSpec& a, const VariationSpec& b) {
  for (int i = 0; i < 3; ++i)
    if (std::abs(a.offset[static_cast<std::size_t>(i)] - b.offset[static_cast<std::size_t>(i)]) > 1)
      return false;
  return std::abs(a.roll_deg - b.roll_deg) <= 15;
}

// ---- trajectory synthesis ---------------------------------------------------

struct TrajectoryConfig {
  int max_frames = 60;
  double ds_min = 1.8;
  double ds_max = 2.6;
  int segments_min = 4;
  int segments_max = 8;
  double delta_d = 4.0;

  void validate() const {
    if (max_frames < 2) throw ConfigError("TrajectoryConfig: max_frames must be >= 2");
    if (!(ds_min > 0.0) || ds_max < ds_min)
      throw ConfigError("TrajectoryConfig: need 0 < ds_min <= ds_max");
    if (segments_min < 1 || segments_max < segments_min)
      throw ConfigError("TrajectoryConfig: bad segment range");
    if (!(delta_d > 0.0)) throw ConfigError("TrajectoryConfig: delta_d must be positive");
  }
};

struct VariationInterval {
  double s_begin = 0.0;
  double s_end = 0.0;
  VariationSpec variation;
};

struct TrajectorySpec {
  std::uint64_t patient_seed = 0;
  LobeLabel lobe = LobeLabel::UpperRight;
  std::vector<VariationInterval> schedule;   // covers [0, total_length]
  std::vector<double> velocity_profile;      // arc-length increment per step
  std::string traj_id;
};

// Random piecewise-constant variation schedule plus a velocity profile.
// Intervals partition [0, L]; each interval's variation is drawn uniformly
// among grid neighbours of the previous one (the first uniformly overall).
inline TrajectorySpec combine_variations(std::uint64_t seed, const NavigationPath& path,
                                         const std::vector<VariationSpec>& variations,
                                         const TrajectoryConfig& cfg = {}) {
  if (variations.empty()) throw PreconditionError("combine_variations: no variations");
  cfg.validate();
  Rng rng(derive_seed(seed, 0xc0b1));
  const double total = path.total_length();

  TrajectorySpec spec;
  const int n_seg = static_cast<int>(rng.uniform_int(cfg.segments_min, cfg.segments_max));
  std::vector<double> cuts;
  for (int i = 0; i + 1 < n_seg; ++i) cuts.push_back(rng.uniform(0.0, total));
  std::sort(cuts.begin(), cuts.end());
  cuts.insert(cuts.begin(), 0.0);
  cuts.push_back(total);

  std::size_t current =
      static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(variations.size()) - 1));
  std::vector<double> seg_ds;
  for (int i = 0; i < n_seg; ++i) {
    if (i > 0) {
      std::vector<std::size_t> nbrs;
      for (std::size_t k = 0; k < variations.size(); ++k)
        if (grid_adjacent(variations[current], variations[k])) nbrs.push_back(k);
      current = nbrs[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(nbrs.size()) - 1))];
    }
    VariationInterval iv;
    iv.s_begin = cuts[static_cast<std::size_t>(i)];
    iv.s_end = cuts[static_cast<std::size_t>(i) + 1];
    iv.variation = variations[current];
    spec.schedule.push_back(iv);
    seg_ds.push_back(rng.uniform(cfg.ds_min, cfg.ds_max));
  }

  // Walk the profile: each step uses the active segment's increment.
  const double usable = total - cfg.delta_d;
  double s = 0.0;
  for (int step = 0; step + 1 < cfg.max_frames; ++step) {
    std::size_t seg = 0;
    while (seg + 1 < spec.schedule.size() && s >= spec.schedule[seg].s_end) seg++;
    const double ds = seg_ds[seg];
    if (s + ds > usable) break;
    spec.velocity_profile.push_back(ds);
    s += ds;
  }
  return spec;
}

inline const VariationSpec& active_variation(const TrajectorySpec& spec, double s) {
  for (const auto& iv : spec.schedule)
    if (s < iv.s_end || &iv == &spec.schedule.back()) return iv.variation;
  return spec.schedule.back().variation;
}

// Per-frame ground truth as stored in poses.jsonl.
struct FrameRecord {
  int index = 0;
  double s = 0.0;
  Pose pose;
  VariationSpec variation;
  bool clamped = false;
};

struct SynthesizedTrajectory {
  std::vector<Pose> poses;
  std::vector<Frame> frames;
  std::vector<FrameRecord> records;
  int clamp_events = 0;
};

// Walks the velocity profile, placing an offset camera at every step. The
// positional offset shifts the camera while the look-at target stays on the
// central path, so the viewpoint changes implicitly.
inline SynthesizedTrajectory synthesize_trajectory(const NavigationPath& path,
                                                   const AirwaySdf& sdf,
                                                   const TrajectorySpec& spec,
                                                   const CameraIntrinsics& cam, double delta_d,
                                                   bool render_frames = true) {
  SynthesizedTrajectory out;
  double s = 0.0;
  const std::size_t n_frames = spec.velocity_profile.size() + 1;
  for (std::size_t i = 0; i < n_frames; ++i) {
    const VariationSpec& var = active_variation(spec, s);
    const Vec3 offset{static_cast<double>(var.offset[0]), static_cast<double>(var.offset[1]),
                      static_cast<double>(var.offset[2])};
    OffsetCamera cam_pose =
        camera_pose_at_offset(path, sdf, s, delta_d, deg_to_rad(var.roll_deg), offset);
    FrameRecord rec;
    rec.index = static_cast<int>(i);
    rec.s = s;
    rec.pose = cam_pose.pose;
    rec.variation = var;
    rec.clamped = cam_pose.clamped;
    if (cam_pose.clamped) out.clamp_events++;
    out.records.push_back(rec);
    out.poses.push_back(cam_pose.pose);
    if (i < spec.velocity_profile.size()) s += spec.velocity_profile[i];
  }
  if (render_frames) {
    out.frames.reserve(out.poses.size());
    for (const Pose& p : out.poses) out.frames.push_back(render(sdf, p, cam));
  }
  return out;
}

// ---- splits -----------------------------------------------------------------

struct SplitScheme {
  enum class Kind { Personalized, CrossSubject };
  Kind kind = Kind::Personalized;
  int train_per_lobe = 15;
  int val_per_lobe = 3;
  std::string holdout_patient;

  static SplitScheme personalized(int train = 15, int val = 3) {
    SplitScheme s;
    s.kind = Kind::Personalized;
    s.train_per_lobe = train;
    s.val_per_lobe = val;
    return s;
  }

  static SplitScheme cross_subject(std::string patient) {
    SplitScheme s;
    s.kind = Kind::CrossSubject;
    s.holdout_patient = std::move(patient);
    return s;
  }

  // "personalized" or "cross-subject:<patient>"
  static SplitScheme parse(const std::string& text) {
    if (text == "personalized") return personalized();
    const std::string prefix = "cross-subject:";
    if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size())
      return cross_subject(text.substr(prefix.size()));
    throw ConfigError("unknown scheme '" + text +
                      "' (expected personalized|cross-subject:<patient>)");
  }

  std::string name() const {
    return kind == Kind::Personalized ? "personalized" : "cross-subject:" + holdout_patient;
  }
};

// ---- manifest ---------------------------------------------------------------

struct TrajectoryInfo {
  std::string patient;
  LobeLabel lobe = LobeLabel::UpperRight;
  std::string traj_id;
  std::string rel_dir;  // patient/lobe/traj_id
  int frames = 0;
  int clamp_events = 0;
};

struct NormalizationStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stddev{1, 1, 1};
};

struct DatasetManifest {
  nlohmann::ordered_json config;
  std::string config_hash;
  std::vector<std::string> patients;
  std::vector<LobeLabel> lobes;
  std::vector<TrajectoryInfo> trajectories;
  NormalizationStats stats;
  std::map<std::string, std::string> split;  // rel_dir -> train|val|unused
  int chunk_len = 10;
  int dropped_pairs = 0;

  const TrajectoryInfo* find(const std::string& rel_dir) const {
    for (const auto& t : trajectories)
      if (t.rel_dir == rel_dir) return &t;
    return nullptr;
  }
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["config"] = m.config;
  j["config_hash"] = m.config_hash;
  j["patients"] = m.patients;
  {
    std::vector<std::string> lobes;
    for (LobeLabel l : m.lobes) lobes.push_back(to_string(l));
    j["lobes"] = lobes;
  }
  nlohmann::ordered_json trajs = nlohmann::ordered_json::array();
  for (const auto& t : m.trajectories) {
    nlohmann::ordered_json tj;
    tj["patient"] = t.patient;
    tj["lobe"] = to_string(t.lobe);
    tj["traj_id"] = t.traj_id;
    tj["rel_dir"] = t.rel_dir;
    tj["frames"] = t.frames;
    tj["clamp_events"] = t.clamp_events;
    tj["split"] = m.split.count(t.rel_dir) ? m.split.at(t.rel_dir) : "unused";
    trajs.push_back(tj);
  }
  j["trajectories"] = trajs;
  j["stats"] = {{"mean", m.stats.mean}, {"stddev", m.stats.stddev}};
  j["chunk_len"] = m.chunk_len;
  j["dropped_pairs"] = m.dropped_pairs;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::ordered_json& j) {
  DatasetManifest m;
  m.config = j.at("config");
  m.config_hash = j.at("config_hash").get<std::string>();
  m.patients = j.at("patients").get<std::vector<std::string>>();
  for (const auto& l : j.at("lobes")) m.lobes.push_back(lobe_from_string(l.get<std::string>()));
  for (const auto& tj : j.at("trajectories")) {
    TrajectoryInfo t;
    t.patient = tj.at("patient").get<std::string>();
    t.lobe = lobe_from_string(tj.at("lobe").get<std::string>());
    t.traj_id = tj.at("traj_id").get<std::string>();
    t.rel_dir = tj.at("rel_dir").get<std::string>();
    t.frames = tj.at("frames").get<int>();
    t.clamp_events = tj.at("clamp_events").get<int>();
    m.split[t.rel_dir] = tj.at("split").get<std::string>();
    m.trajectories.push_back(t);
  }
  m.stats.mean = j.at("stats").at("mean").get<std::array<double, 3>>();
  m.stats.stddev = j.at("stats").at("stddev").get<std::array<double, 3>>();
  m.chunk_len = j.at("chunk_len").get<int>();
  m.dropped_pairs = j.at("dropped_pairs").get<int>();
  return m;
}

// Personalized: per patient-lobe group the first train_per_lobe trajectories
// train and the next val_per_lobe validate. CrossSubject: every trajectory of
// the holdout patient validates, all others train.
inline std::map<std::string, std::string> make_splits(const DatasetManifest& manifest,
                                                      const SplitScheme& scheme) {
  std::map<std::string, std::string> out;
  if (scheme.kind == SplitScheme::Kind::CrossSubject) {
    bool found = false;
    for (const auto& p : manifest.patients) found = found || p == scheme.holdout_patient;
    if (!found)
      throw ConfigError("make_splits: holdout patient '" + scheme.holdout_patient +
                        "' not in dataset");
    for (const auto& t : manifest.trajectories)
      out[t.rel_dir] = t.patient == scheme.holdout_patient ? "val" : "train";
    return out;
  }
  std::map<std::string, std::vector<const TrajectoryInfo*>> groups;
  for (const auto& t : manifest.trajectories)
    groups[t.patient + "/" + to_string(t.lobe)].push_back(&t);
  for (auto& [group, trajs] : groups) {
    const int need = scheme.train_per_lobe + scheme.val_per_lobe;
    if (static_cast<int>(trajs.size()) < need)
      throw ConfigError("make_splits: group " + group + " has " +
                        std::to_string(trajs.size()) + " trajectories, needs " +
                        std::to_string(need));
    std::sort(trajs.begin(), trajs.end(),
              [](const TrajectoryInfo* a, const TrajectoryInfo* b) {
                return a->traj_id < b->traj_id;
              });
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      const char* label = "unused";
      if (static_cast<int>(i) < scheme.train_per_lobe)
        label = "train";
      else if (static_cast<int>(i) < scheme.train_per_lobe + scheme.val_per_lobe)
        label = "val";
      out[trajs[i]->rel_dir] = label;
    }
  }
  return out;
}

// ---- dataset configuration --------------------------------------------------

struct DatasetConfig {
  std::uint64_t seed = 1;
  int patients = 2;
  std::vector<LobeLabel> lobes = {LobeLabel::UpperRight};
  int trajectories_per_lobe = 18;
  bool paper_scale_variations = false;  // full 876-trajectory grid per lobe
  TrajectoryConfig trajectory;
  CameraIntrinsics camera;
  PatientSpec anatomy;  // per-patient seed derived from `seed`
  int chunk_len = 10;
  SplitScheme split;

  int effective_trajectories_per_lobe() const {
    return paper_scale_variations ? static_cast<int>(enumerate_variations().size())
                                  : trajectories_per_lobe;
  }

  void validate() const {
    if (patients < 1) throw ConfigError("DatasetConfig: need at least one patient");
    if (lobes.empty()) throw ConfigError("DatasetConfig: need at least one lobe");
    if (effective_trajectories_per_lobe() < 1)
      throw ConfigError("DatasetConfig: need at least one trajectory per lobe");
    if (chunk_len < 1) throw ConfigError("DatasetConfig: chunk_len must be >= 1");
    trajectory.validate();
    camera.validate();
    anatomy.validate();
  }
};

inline void to_json(nlohmann::ordered_json& j, const DatasetConfig& c) {
  j = nlohmann::ordered_json{
      {"seed", c.seed},
      {"patients", c.patients},
      {"lobes", [&] {
         std::vector<std::string> ls;
         for (LobeLabel l : c.lobes) ls.push_back(to_string(l));
         return ls;
       }()},
      {"trajectories_per_lobe", c.trajectories_per_lobe},
      {"paper_scale_variations", c.paper_scale_variations},
      {"trajectory",
       {{"max_frames", c.trajectory.max_frames},
        {"ds_min", c.trajectory.ds_min},
        {"ds_max", c.trajectory.ds_max},
        {"segments_min", c.trajectory.segments_min},
        {"segments_max", c.trajectory.segments_max},
        {"delta_d", c.trajectory.delta_d}}},
      {"camera",
       {{"width", c.camera.width},
        {"height", c.camera.height},
        {"vertical_fov", c.camera.vertical_fov},
        {"near_clip", c.camera.near_clip}}},
      {"anatomy",
       {{"scale", c.anatomy.scale},
        {"branching_levels", c.anatomy.branching_levels},
        {"angle_jitter", c.anatomy.angle_jitter},
        {"radius_taper", c.anatomy.radius_taper}}},
      {"chunk_len", c.chunk_len},
      {"split",
       {{"scheme", c.split.name()},
        {"train_per_lobe", c.split.train_per_lobe},
        {"val_per_lobe", c.split.val_per_lobe}}}};
}

template <class J>
DatasetConfig dataset_config_from_json(const J& j) {
  DatasetConfig c;
  if (j.contains("seed")) c.seed = j.at("seed").template get<std::uint64_t>();
  if (j.contains("patients")) c.patients = j.at("patients").template get<int>();
  if (j.contains("lobes")) {
    c.lobes.clear();
    for (const auto& l : j.at("lobes"))
      c.lobes.push_back(lobe_from_string(l.template get<std::string>()));
  }
  if (j.contains("trajectories_per_lobe"))
    c.trajectories_per_lobe = j.at("trajectories_per_lobe").template get<int>();
  if (j.contains("paper_scale_variations"))
    c.paper_scale_variations = j.at("paper_scale_variations").template get<bool>();
  if (j.contains("trajectory")) {
    const auto& t = j.at("trajectory");
    if (t.contains("max_frames")) c.trajectory.max_frames = t.at("max_frames").template get<int>();
    if (t.contains("ds_min")) c.trajectory.ds_min = t.at("ds_min").template get<double>();
    if (t.contains("ds_max")) c.trajectory.ds_max = t.at("ds_max").template get<double>();
    if (t.contains("segments_min"))
      c.trajectory.segments_min = t.at("segments_min").template get<int>();
    if (t.contains("segments_max"))
      c.trajectory.segments_max = t.at("segments_max").template get<int>();
    if (t.contains("delta_d")) c.trajectory.delta_d = t.at("delta_d").template get<double>();
  }
  if (j.contains("camera")) {
    const auto& cm = j.at("camera");
    if (cm.contains("width")) c.camera.width = cm.at("width").template get<int>();
    if (cm.contains("height")) c.camera.height = cm.at("height").template get<int>();
    if (cm.contains("vertical_fov"))
      c.camera.vertical_fov = cm.at("vertical_fov").template get<double>();
    if (cm.contains("near_clip")) c.camera.near_clip = cm.at("near_clip").template get<double>();
  }
  if (j.contains("anatomy")) {
    const auto& a = j.at("anatomy");
    if (a.contains("scale")) c.anatomy.scale = a.at("scale").template get<double>();
    if (a.contains("branching_levels"))
      c.anatomy.branching_levels = a.at("branching_levels").template get<int>();
    if (a.contains("angle_jitter"))
      c.anatomy.angle_jitter = a.at("angle_jitter").template get<double>();
    if (a.contains("radius_taper"))
      c.anatomy.radius_taper = a.at("radius_taper").template get<double>();
  }
  if (j.contains("chunk_len")) c.chunk_len = j.at("chunk_len").template get<int>();
  if (j.contains("split")) {
    const auto& s = j.at("split");
    if (s.contains("scheme"))
      c.split = SplitScheme::parse(s.at("scheme").template get<std::string>());
    if (s.contains("train_per_lobe"))
      c.split.train_per_lobe = s.at("train_per_lobe").template get<int>();
    if (s.contains("val_per_lobe"))
      c.split.val_per_lobe = s.at("val_per_lobe").template get<int>();
  }
  return c;
}

// ---- building ---------------------------------------------------------------

namespace detail {

inline std::string patient_name(int idx) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "p%02d", idx);
  return buf;
}

inline std::string traj_name(int idx) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "t%03d", idx);
  return buf;
}

inline std::string frame_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.ppm", idx);
  return buf;
}

inline nlohmann::ordered_json frame_record_json(const FrameRecord& rec,
                                                const FrameRecord* next) {
  nlohmann::ordered_json j;
  j["frame"] = rec.index;
  j["s"] = rec.s;
  j["position"] = {rec.pose.position.x, rec.pose.position.y, rec.pose.position.z};
  j["euler"] = {rec.pose.orientation.alpha, rec.pose.orientation.beta,
                rec.pose.orientation.gamma};
  j["offset"] = rec.variation.offset;
  j["roll_deg"] = rec.variation.roll_deg;
  j["central"] = rec.variation.is_central;
  j["clamped"] = rec.clamped;
  if (next) {
    DeltaPose d = delta_pose(rec.pose, next->pose);
    j["delta"] = {d.dp.x, d.dp.y, d.dp.z, d.dorient.x, d.dorient.y, d.dorient.z};
  }
  return j;
}

}  // namespace detail

// Renders every configured trajectory to `out_dir`, writes per-trajectory
// poses.jsonl files and the top-level manifest.json, and computes per-channel
// normalization stats over the training split only. The whole dataset is a
// pure function of the config; regeneration is byte-identical.
inline DatasetManifest build_dataset(const DatasetConfig& cfg,
                                     const std::filesystem::path& out_dir, int jobs = 1) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  const std::vector<VariationSpec> variations = enumerate_variations();
  const int n_traj = cfg.effective_trajectories_per_lobe();

  DatasetManifest manifest;
  {
    nlohmann::ordered_json cj;
    to_json(cj, cfg);
    manifest.config = cj;
    manifest.config_hash = fnv1a64_hex(dump_json_g17(cj));
  }
  manifest.lobes = cfg.lobes;
  manifest.chunk_len = cfg.chunk_len;

  struct Job {
    int patient_idx;
    std::size_t lobe_idx;
    int traj_idx;
    TrajectoryInfo info;
  };
  std::vector<Job> jobs_list;

  // Patient anatomies first (shared by all of that patient's trajectories).
  std::vector<AirwayTree> trees;
  std::vector<std::vector<NavigationPath>> paths(static_cast<std::size_t>(cfg.patients));
  for (int p = 0; p < cfg.patients; ++p) {
    const std::string pname = detail::patient_name(p);
    manifest.patients.push_back(pname);
    PatientSpec pspec = cfg.anatomy;
    pspec.seed = derive_seed(cfg.seed, 0x9a7, static_cast<std::uint64_t>(p));
    AirwayTree tree = generate_patient(pspec);
    fs::create_directories(out_dir / pname);
    {
      nlohmann::json tj = tree;
      std::ofstream f(out_dir / pname / "airway.json");
      f << dump_json_g17(tj, 1);
    }
    for (std::size_t li = 0; li < cfg.lobes.size(); ++li) {
      paths[static_cast<std::size_t>(p)].push_back(centerline_path(
          tree, cfg.lobes[li], derive_seed(cfg.seed, 0xce11, static_cast<std::uint64_t>(p) * 16 + li)));
      for (int ti = 0; ti < n_traj; ++ti) {
        Job job;
        job.patient_idx = p;
        job.lobe_idx = li;
        job.traj_idx = ti;
        job.info.patient = pname;
        job.info.lobe = cfg.lobes[li];
        job.info.traj_id = detail::traj_name(ti);
        job.info.rel_dir = pname + "/" + to_string(cfg.lobes[li]) + "/" + job.info.traj_id;
        jobs_list.push_back(job);
      }
    }
    trees.push_back(std::move(tree));
  }

  // Per-trajectory synthesis, parallel across trajectories. Stats accumulate
  // afterwards in deterministic order.
  std::vector<SynthesizedTrajectory> synthesized(jobs_list.size());
  std::vector<std::string> failures(jobs_list.size());
  std::vector<AirwaySdf> sdfs;
  sdfs.reserve(trees.size());
  for (const auto& t : trees) sdfs.emplace_back(t);

  auto run_job = [&](std::size_t ji) {
    Job& job = jobs_list[ji];
    try {
      const NavigationPath& path =
          paths[static_cast<std::size_t>(job.patient_idx)][job.lobe_idx];
      const std::uint64_t traj_seed =
          derive_seed(cfg.seed, 0x17a5 + static_cast<std::uint64_t>(job.patient_idx),
                      job.lobe_idx * 4096 + static_cast<std::uint64_t>(job.traj_idx));
      TrajectorySpec tspec = combine_variations(traj_seed, path, variations, cfg.trajectory);
      tspec.patient_seed = trees[static_cast<std::size_t>(job.patient_idx)].spec.seed;
      tspec.lobe = job.info.lobe;
      tspec.traj_id = job.info.traj_id;
      SynthesizedTrajectory syn = synthesize_trajectory(
          path, sdfs[static_cast<std::size_t>(job.patient_idx)], tspec, cfg.camera,
          cfg.trajectory.delta_d);
      job.info.frames = static_cast<int>(syn.frames.size());
      job.info.clamp_events = syn.clamp_events;

      const fs::path tdir = out_dir / job.info.rel_dir;
      fs::create_directories(tdir);
      for (std::size_t i = 0; i < syn.frames.size(); ++i)
        write_ppm(syn.frames[i], tdir / detail::frame_name(static_cast<int>(i)));
      std::ofstream poses(tdir / "poses.jsonl");
      for (std::size_t i = 0; i < syn.records.size(); ++i) {
        const FrameRecord* next = i + 1 < syn.records.size() ? &syn.records[i + 1] : nullptr;
        poses << dump_json_g17(detail::frame_record_json(syn.records[i], next)) << "\n";
      }
      synthesized[ji] = std::move(syn);
    } catch (const std::exception& e) {
      failures[ji] = e.what();
    }
  };

  const int n_jobs = std::max(1, jobs);
  if (n_jobs == 1) {
    for (std::size_t ji = 0; ji < jobs_list.size(); ++ji) run_job(ji);
  } else {
    std::vector<std::thread> workers;
    std::size_t next = 0;
    const std::size_t stride =
        (jobs_list.size() + static_cast<std::size_t>(n_jobs) - 1) / static_cast<std::size_t>(n_jobs);
    for (int w = 0; w < n_jobs && next < jobs_list.size(); ++w) {
      const std::size_t b = next;
      const std::size_t e = std::min(jobs_list.size(), b + stride);
      workers.emplace_back([&, b, e] {
        for (std::size_t ji = b; ji < e; ++ji) run_job(ji);
      });
      next = e;
    }
    for (auto& w : workers) w.join();
  }
  for (std::size_t ji = 0; ji < failures.size(); ++ji)
    if (!failures[ji].empty())
      throw Error("build_dataset: trajectory " + jobs_list[ji].info.rel_dir + ": " + failures[ji]);

  for (const Job& job : jobs_list) manifest.trajectories.push_back(job.info);

  manifest.split = make_splits(manifest, cfg.split);

  // Normalization stats over training frames only, fixed accumulation order.
  double sum = 0.0, sumsq = 0.0;
  std::int64_t count = 0;
  for (std::size_t ji = 0; ji < jobs_list.size(); ++ji) {
    if (manifest.split.at(jobs_list[ji].info.rel_dir) != "train") continue;
    for (const Frame& f : synthesized[ji].frames) {
      for (std::size_t i = 0; i < f.pixels.size(); i += 3) {
        const double v = static_cast<double>(f.pixels[i]) / 255.0;
        sum += v;
        sumsq += v * v;
        count++;
      }
    }
  }
  if (count > 0) {
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sumsq / static_cast<double>(count) - mean * mean);
    for (int c = 0; c < 3; ++c) {
      manifest.stats.mean[static_cast<std::size_t>(c)] = mean;
      manifest.stats.stddev[static_cast<std::size_t>(c)] = std::sqrt(var);
    }
  }

  for (const Job& job : jobs_list)
    manifest.dropped_pairs += (job.info.frames - 1) % cfg.chunk_len;

  std::ofstream mf(out_dir / "manifest.json");
  mf << dump_json_g17(manifest_to_json(manifest), 1);
  return manifest;
}

// (pixel/255 - mean) / std per channel; grayscale replicated across the three
// output channels, CHW layout.
template <class S>
std::vector<S> standardize_frame(const Frame& frame, const NormalizationStats& stats) {
  for (double sd : stats.stddev)
    if (!(sd > 0.0))
      throw PreconditionError("standardize_frame: zero standard deviation (constant dataset)");
  const std::size_t hw = static_cast<std::size_t>(frame.width * frame.height);
  std::vector<S> out(3 * hw);
  for (int c = 0; c < 3; ++c) {
    const double mean = stats.mean[static_cast<std::size_t>(c)];
    const double inv = 1.0 / stats.stddev[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = static_cast<double>(frame.pixels[i * 3 + static_cast<std::size_t>(c)]) / 255.0;
      out[static_cast<std::size_t>(c) * hw + i] = static_cast<S>((v - mean) * inv);
    }
  }
  return out;
}

// ---- training-side records ----------------------------------------------------

struct SampleRecord {
  int frame_a = 0, frame_b = 0;
  Pose pose_a, pose_b;
  DeltaPose delta;
  std::string traj_id;  // rel_dir, globally unique
  int step_index = 0;
};

struct SequenceChunk {
  std::vector<SampleRecord> records;
};

// Non-overlapping contiguous chunks of exactly L records; the trailing
// remainder is dropped.
inline std::vector<SequenceChunk> chunk_sequences(const std::vector<SampleRecord>& records,
                                                  int chunk_len = 10) {
  if (chunk_len < 1) throw PreconditionError("chunk_sequences: L must be >= 1");
  std::vector<SequenceChunk> out;
  for (std::size_t begin = 0; begin + static_cast<std::size_t>(chunk_len) <= records.size();
       begin += static_cast<std::size_t>(chunk_len)) {
    SequenceChunk chunk;
    for (int i = 0; i < chunk_len; ++i) {
      const SampleRecord& r = records[begin + static_cast<std::size_t>(i)];
      if (i > 0) {
        const SampleRecord& prev = chunk.records.back();
        if (r.traj_id != prev.traj_id || r.step_index != prev.step_index + 1)
          throw PreconditionError("chunk_sequences: records must be contiguous in one trajectory");
      }
      chunk.records.push_back(r);
    }
    out.push_back(std::move(chunk));
  }
  return out;
}

// ---- loading -----------------------------------------------------------------

struct LoadedTrajectory {
  TrajectoryInfo info;
  std::string split;
  int width = 0, height = 0;
  std::vector<std::vector<std::uint8_t>> gray;  // per frame, H*W bytes
  std::vector<Pose> poses;
  std::vector<double> s_values;
  std::vector<SampleRecord> records;  // frames - 1 entries
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<LoadedTrajectory> trajectories;
  std::vector<std::size_t> train_idx, val_idx;
  int width = 0, height = 0;
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("load_dataset: missing manifest.json in " + dir.string());
  LoadedDataset ds;
  ds.manifest = manifest_from_json(nlohmann::ordered_json::parse(mf));

  for (const TrajectoryInfo& info : ds.manifest.trajectories) {
    LoadedTrajectory traj;
    traj.info = info;
    traj.split = ds.manifest.split.count(info.rel_dir) ? ds.manifest.split.at(info.rel_dir)
                                                       : "unused";
    const fs::path tdir = dir / info.rel_dir;
    std::ifstream poses(tdir / "poses.jsonl");
    if (!poses) throw IoError("load_dataset: missing poses.jsonl in " + tdir.string());
    std::string line;
    int index = 0;
    std::vector<std::array<double, 6>> deltas;
    while (std::getline(poses, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      Pose pose;
      pose.position = {j.at("position")[0].get<double>(), j.at("position")[1].get<double>(),
                       j.at("position")[2].get<double>()};
      pose.orientation = {j.at("euler")[0].get<double>(), j.at("euler")[1].get<double>(),
                          j.at("euler")[2].get<double>()};
      traj.poses.push_back(pose);
      traj.s_values.push_back(j.at("s").get<double>());
      if (j.contains("delta")) {
        std::array<double, 6> d{};
        for (int i = 0; i < 6; ++i) d[static_cast<std::size_t>(i)] = j.at("delta")[static_cast<std::size_t>(i)].get<double>();
        deltas.push_back(d);
      }
      index++;
    }
    if (index != info.frames)
      throw IoError("load_dataset: " + info.rel_dir + " has " + std::to_string(index) +
                    " pose records, manifest says " + std::to_string(info.frames));
    for (int i = 0; i < info.frames; ++i) {
      Frame f = read_ppm(tdir / detail::frame_name(i));
      if (traj.width == 0) {
        traj.width = f.width;
        traj.height = f.height;
      }
      std::vector<std::uint8_t> g(static_cast<std::size_t>(f.width * f.height));
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = f.pixels[k * 3];
      traj.gray.push_back(std::move(g));
    }
    for (int i = 0; i + 1 < info.frames; ++i) {
      SampleRecord rec;
      rec.frame_a = i;
      rec.frame_b = i + 1;
      rec.pose_a = traj.poses[static_cast<std::size_t>(i)];
      rec.pose_b = traj.poses[static_cast<std::size_t>(i + 1)];
      if (static_cast<std::size_t>(i) < deltas.size()) {
        const auto& d = deltas[static_cast<std::size_t>(i)];
        rec.delta.dp = {d[0], d[1], d[2]};
        rec.delta.dorient = {d[3], d[4], d[5]};
      } else {
        rec.delta = delta_pose(rec.pose_a, rec.pose_b);
      }
      rec.traj_id = info.rel_dir;
      rec.step_index = i;
      traj.records.push_back(rec);
    }
    ds.trajectories.push_back(std::move(traj));
  }
  if (!ds.trajectories.empty()) {
    ds.width = ds.trajectories.front().width;
    ds.height = ds.trajectories.front().height;
  }
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.trajectories[i].split == "train")
      ds.train_idx.push_back(i);
    else if (ds.trajectories[i].split == "val")
      ds.val_idx.push_back(i);
  }
  return ds;
}

}  // namespace lumenpose
