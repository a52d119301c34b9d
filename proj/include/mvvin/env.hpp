#pragma once

// Synthetic multimodal gridworld: scenes, agent kinematics, the success
// test, and a raycasting renderer that synthesizes RGB-like, depth,
// segmentation and region observations directly from world state.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvvin/rng.hpp"

namespace mvvin {

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& m) : std::runtime_error(m) {}
};
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------------------
// class vocabulary (global, stable ids; scene files store id - 2 as the cell
// code offset, see scene format in the README)

inline const std::vector<std::string>& object_classes() {
  static const std::vector<std::string> k = {
      // kitchen
      "microwave", "toaster", "fridge", "kettle", "sink",
      // living room
      "television", "sofa", "lamp", "bookshelf",
      // bedroom
      "bed", "dresser", "mirror", "wardrobe",
      // bathroom
      "toilet", "bathtub", "towel",
  };
  return k;
}

inline int class_id(const std::string& name) {
  const auto& k = object_classes();
  for (size_t i = 0; i < k.size(); ++i)
    if (k[i] == name) return static_cast<int>(i);
  return -1;
}

inline const std::vector<std::string>& room_types() {
  static const std::vector<std::string> k = {"kitchen", "living_room", "bedroom", "bathroom"};
  return k;
}

inline const std::vector<std::string>& room_vocabulary(const std::string& room_type) {
  static const std::vector<std::string> kitchen = {"microwave", "toaster", "fridge", "kettle",
                                                   "sink"};
  static const std::vector<std::string> living = {"television", "sofa", "lamp", "bookshelf"};
  static const std::vector<std::string> bedroom = {"bed", "dresser", "mirror", "wardrobe", "lamp"};
  static const std::vector<std::string> bathroom = {"toilet", "bathtub", "sink", "towel"};
  if (room_type == "kitchen") return kitchen;
  if (room_type == "living_room") return living;
  if (room_type == "bedroom") return bedroom;
  if (room_type == "bathroom") return bathroom;
  throw ValidationError("unknown room type: " + room_type);
}

// ---------------------------------------------------------------------------
// cells & scene

enum class CellKind : std::uint8_t { Free, Wall, Object };

struct Cell {
  CellKind kind = CellKind::Free;
  int object_class = -1;  // valid when kind == Object
};

constexpr double kCellSizeM = 0.25;  // "Move Forward by 0.25m"
constexpr double kFovDeg = 90.0;
constexpr int kSuccessRadiusCells = 4;  // 4 * 0.25 m = 1 m

struct GridScene {
  std::string id;
  std::string room_type;
  int width = 0;   // cells along x
  int height = 0;  // cells along y
  std::vector<Cell> cells;  // row-major, index y*width+x
  std::vector<std::string> targets;  // vocabulary O for this scene

  const Cell& at(int x, int y) const { return cells[static_cast<size_t>(y) * width + x]; }
  Cell& at(int x, int y) { return cells[static_cast<size_t>(y) * width + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  bool free_at(int x, int y) const {
    return in_bounds(x, y) && at(x, y).kind == CellKind::Free;
  }
  double diagonal_m() const {
    return std::sqrt(static_cast<double>(width) * width +
                     static_cast<double>(height) * height) *
           kCellSizeM;
  }
};

// ---------------------------------------------------------------------------
// agent

// heading h in 0..7, angle = h * 45deg, 0 = +x, counterclockwise
struct AgentPose {
  int x = 0;
  int y = 0;
  int heading = 0;
  int pitch = 0;  // degrees, one of {-30, 0, +30}
};

enum class Action : int {
  MoveAhead = 0,
  RotateLeft = 1,
  RotateRight = 2,
  LookDown = 3,
  LookUp = 4,
  Done = 5,
};
constexpr int kNumActions = 6;

inline const char* action_name(Action a) {
  static const char* names[] = {"MoveAhead", "RotateLeft", "RotateRight",
                                "LookDown",  "LookUp",     "Done"};
  return names[static_cast<int>(a)];
}

inline std::array<int, 2> heading_delta(int heading) {
  static const std::array<std::array<int, 2>, 8> d = {{{1, 0},
                                                       {1, 1},
                                                       {0, 1},
                                                       {-1, 1},
                                                       {-1, 0},
                                                       {-1, -1},
                                                       {0, -1},
                                                       {1, -1}}};
  return d[heading];
}

inline double heading_angle_rad(int heading) { return heading * (M_PI / 4.0); }

struct StepResult {
  AgentPose pose;
  bool collided = false;
  bool done_signaled = false;
};

inline StepResult step(const GridScene& scene, const AgentPose& pose, Action action) {
  StepResult r{pose, false, false};
  switch (action) {
    case Action::MoveAhead: {
      auto d = heading_delta(pose.heading);
      const int nx = pose.x + d[0], ny = pose.y + d[1];
      if (scene.free_at(nx, ny)) {
        r.pose.x = nx;
        r.pose.y = ny;
      } else {
        r.collided = true;
      }
      break;
    }
    case Action::RotateLeft:
      r.pose.heading = (pose.heading + 1) % 8;
      break;
    case Action::RotateRight:
      r.pose.heading = (pose.heading + 7) % 8;
      break;
    case Action::LookDown:
      r.pose.pitch = std::max(-30, pose.pitch - 30);
      break;
    case Action::LookUp:
      r.pose.pitch = std::min(30, pose.pitch + 30);
      break;
    case Action::Done:
      r.done_signaled = true;
      break;
  }
  return r;
}

// ---------------------------------------------------------------------------
// geometry helpers

// line of sight between cell centers; blocked by any non-free cell strictly
// between the endpoints (supercover walk with fine sampling)
inline bool clear_ray(const GridScene& scene, int x0, int y0, int x1, int y1) {
  const double ax = x0 + 0.5, ay = y0 + 0.5;
  const double bx = x1 + 0.5, by = y1 + 0.5;
  const double dist = std::hypot(bx - ax, by - ay);
  const int steps = std::max(1, static_cast<int>(std::ceil(dist * 64.0)));
  for (int s = 1; s < steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const int cx = static_cast<int>(std::floor(ax + (bx - ax) * t));
    const int cy = static_cast<int>(std::floor(ay + (by - ay) * t));
    if ((cx == x0 && cy == y0) || (cx == x1 && cy == y1)) continue;
    if (!scene.in_bounds(cx, cy) || scene.at(cx, cy).kind != CellKind::Free) return false;
  }
  return true;
}

// angle from the heading direction to the vector (dx,dy), in [0, pi]
inline bool within_fov(int heading, double dx, double dy, double half_fov_deg = kFovDeg / 2.0) {
  const double norm = std::hypot(dx, dy);
  if (norm == 0.0) return true;
  const double ha = heading_angle_rad(heading);
  const double dot = (std::cos(ha) * dx + std::sin(ha) * dy) / norm;
  return dot >= std::cos(half_fov_deg * M_PI / 180.0) - 1e-12;
}

// success: some cell holding the target class within 1 m (4 cells), inside
// the 90deg horizontal FOV cone, with a clear ray to it
inline bool is_success(const GridScene& scene, const AgentPose& pose, const std::string& target) {
  const int tid = class_id(target);
  if (tid < 0) return false;
  for (int y = std::max(0, pose.y - kSuccessRadiusCells);
       y <= std::min(scene.height - 1, pose.y + kSuccessRadiusCells); ++y)
    for (int x = std::max(0, pose.x - kSuccessRadiusCells);
         x <= std::min(scene.width - 1, pose.x + kSuccessRadiusCells); ++x) {
      const Cell& c = scene.at(x, y);
      if (c.kind != CellKind::Object || c.object_class != tid) continue;
      const double dx = x - pose.x, dy = y - pose.y;
      if (dx * dx + dy * dy > kSuccessRadiusCells * kSuccessRadiusCells + 1e-9) continue;
      if (!within_fov(pose.heading, dx, dy)) continue;
      if (!clear_ray(scene, pose.x, pose.y, x, y)) continue;
      return true;
    }
  return false;
}

// ---------------------------------------------------------------------------
// raycasting

struct RayHit {
  int x = -1, y = -1;        // hit cell
  double center_dist = 0.0;  // cell-center to cell-center distance, in cells
  CellKind kind = CellKind::Wall;
  int object_class = -1;
};

// DDA from the agent's cell center along azimuth (radians); returns the first
// non-free cell. Boundary walls guarantee a hit.
inline RayHit cast_ray(const GridScene& scene, int sx, int sy, double azimuth) {
  const double ox = sx + 0.5, oy = sy + 0.5;
  const double dx = std::cos(azimuth), dy = std::sin(azimuth);
  int cx = sx, cy = sy;
  const int stepx = dx > 0 ? 1 : -1;
  const int stepy = dy > 0 ? 1 : -1;
  const double tdx = dx != 0.0 ? std::fabs(1.0 / dx) : std::numeric_limits<double>::infinity();
  const double tdy = dy != 0.0 ? std::fabs(1.0 / dy) : std::numeric_limits<double>::infinity();
  double tmx = dx != 0.0
                   ? ((dx > 0 ? (cx + 1 - ox) : (ox - cx)) * tdx)
                   : std::numeric_limits<double>::infinity();
  double tmy = dy != 0.0
                   ? ((dy > 0 ? (cy + 1 - oy) : (oy - cy)) * tdy)
                   : std::numeric_limits<double>::infinity();
  for (int guard = 0; guard < scene.width + scene.height + 4; ++guard) {
    if (tmx < tmy) {
      cx += stepx;
      tmx += tdx;
    } else {
      cy += stepy;
      tmy += tdy;
    }
    if (!scene.in_bounds(cx, cy)) break;
    const Cell& c = scene.at(cx, cy);
    if (c.kind != CellKind::Free) {
      RayHit h;
      h.x = cx;
      h.y = cy;
      h.center_dist = std::hypot(cx - sx, cy - sy);
      h.kind = c.kind;
      h.object_class = c.object_class;
      return h;
    }
  }
  // unreachable on valid scenes (boundary is wall); report the last cell
  RayHit h;
  h.x = cx;
  h.y = cy;
  h.center_dist = std::hypot(cx - sx, cy - sy);
  return h;
}

// ---------------------------------------------------------------------------
// observation

struct Region {
  int object_class = -1;
  std::vector<double> feature;          // d_r
  std::array<double, 4> box{};          // cx, cy, w, h in [0,1]
  double confidence = 0.0;
  double azimuth = 0.0;                 // relative to heading, radians
};

struct Observation {
  std::vector<int> rgb_shape;           // {c, h, w}
  std::vector<double> rgb_feat;
  int depth_rows = 0, depth_cols = 0;
  std::vector<double> depth_map;        // meters
  std::vector<double> seg_feat;         // per-class visible fractions, padded
  std::vector<Region> regions;          // confidence-descending, <= 7
};

struct RenderConfig {
  int rgb_channels = 8;
  int grid_h = 7, grid_w = 7;
  int depth_rows = 24, depth_cols = 32;
  int seg_dim = 16;
  int region_feature_dim = 16;
  int max_regions = 7;
};

// deterministic hash-driven value in [-1, 1]
inline double hash_unit(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = mix_seed(mix_seed(mix_seed(seed, a), b), c);
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

inline std::vector<double> class_embedding(std::uint64_t encoder_seed, int cls, int dim) {
  std::vector<double> v(static_cast<size_t>(dim));
  double norm = 0.0;
  for (int i = 0; i < dim; ++i) {
    v[i] = hash_unit(encoder_seed, 0x9e1u, static_cast<std::uint64_t>(cls), i);
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& x : v) x /= norm;
  return v;
}

inline Observation render_observation(const GridScene& scene, const AgentPose& pose,
                                      std::uint64_t encoder_seed,
                                      const RenderConfig& cfg = RenderConfig{}) {
  Observation obs;
  const double fov = kFovDeg * M_PI / 180.0;
  const double ha = heading_angle_rad(pose.heading);
  const double diag = scene.diagonal_m();

  // horizontal sweep shared by depth columns, segmentation and rgb patches
  std::vector<RayHit> hits(static_cast<size_t>(cfg.depth_cols));
  for (int j = 0; j < cfg.depth_cols; ++j) {
    const double az = ha - fov / 2.0 + (j + 0.5) * fov / cfg.depth_cols;
    hits[static_cast<size_t>(j)] = cast_ray(scene, pose.x, pose.y, az);
  }

  // depth: rows sample a +/-30deg vertical band shifted by pitch
  obs.depth_rows = cfg.depth_rows;
  obs.depth_cols = cfg.depth_cols;
  obs.depth_map.resize(static_cast<size_t>(cfg.depth_rows) * cfg.depth_cols);
  for (int i = 0; i < cfg.depth_rows; ++i) {
    const double vdeg = pose.pitch + (-30.0 + (i + 0.5) * 60.0 / cfg.depth_rows);
    const double cv = std::cos(vdeg * M_PI / 180.0);
    for (int j = 0; j < cfg.depth_cols; ++j) {
      const double horiz_m = hits[static_cast<size_t>(j)].center_dist * kCellSizeM;
      double d = horiz_m / std::max(cv, 0.05);
      obs.depth_map[static_cast<size_t>(i) * cfg.depth_cols + j] = std::min(d, diag);
    }
  }

  // segmentation: fraction of columns whose first hit is each object class
  obs.seg_feat.assign(static_cast<size_t>(cfg.seg_dim), 0.0);
  for (const auto& h : hits)
    if (h.kind == CellKind::Object && h.object_class >= 0 && h.object_class < cfg.seg_dim)
      obs.seg_feat[static_cast<size_t>(h.object_class)] += 1.0 / cfg.depth_cols;

  // rgb-like map: per 7x7 patch, class-and-distance-conditioned pseudo-random
  // features from the representative azimuth column
  obs.rgb_shape = {cfg.rgb_channels, cfg.grid_h, cfg.grid_w};
  obs.rgb_feat.assign(static_cast<size_t>(cfg.rgb_channels) * cfg.grid_h * cfg.grid_w, 0.0);
  for (int u = 0; u < cfg.grid_h; ++u)
    for (int v = 0; v < cfg.grid_w; ++v) {
      const int col = (v * cfg.depth_cols + cfg.depth_cols / 2) / cfg.grid_w;
      const RayHit& h = hits[static_cast<size_t>(col)];
      const std::uint64_t cls_code =
          h.kind == CellKind::Object ? static_cast<std::uint64_t>(h.object_class) + 2 : 1u;
      const double atten = 1.0 / (1.0 + h.center_dist * kCellSizeM);
      for (int ch = 0; ch < cfg.rgb_channels; ++ch) {
        obs.rgb_feat[(static_cast<size_t>(ch) * cfg.grid_h + u) * cfg.grid_w + v] =
            hash_unit(encoder_seed, cls_code, static_cast<std::uint64_t>(u * 31 + ch), v) * atten;
      }
    }

  // regions: visible object cells, confidence = 1/(1+dist_m)
  std::vector<Region> regions;
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const Cell& c = scene.at(x, y);
      if (c.kind != CellKind::Object) continue;
      const double dx = x - pose.x, dy = y - pose.y;
      if (dx == 0 && dy == 0) continue;
      if (!within_fov(pose.heading, dx, dy)) continue;
      if (!clear_ray(scene, pose.x, pose.y, x, y)) continue;
      Region r;
      r.object_class = c.object_class;
      const double dist_cells = std::hypot(dx, dy);
      const double dist_m = dist_cells * kCellSizeM;
      r.confidence = 1.0 / (1.0 + dist_m);
      double az = std::atan2(dy, dx) - ha;
      while (az > M_PI) az -= 2.0 * M_PI;
      while (az < -M_PI) az += 2.0 * M_PI;
      r.azimuth = az;
      const double ang_w = 2.0 * std::atan2(0.5, dist_cells);
      r.box[0] = std::clamp(0.5 + az / fov, 0.0, 1.0);
      r.box[1] = std::clamp(0.5 - pose.pitch / 180.0, 0.0, 1.0);
      r.box[2] = std::clamp(ang_w / fov, 0.01, 1.0);
      r.box[3] = std::clamp(1.0 / (1.0 + dist_cells), 0.02, 1.0);
      r.feature = class_embedding(encoder_seed, c.object_class, cfg.region_feature_dim);
      const double scale = 1.0 / (1.0 + dist_m);
      for (double& f : r.feature) f *= scale;
      regions.push_back(std::move(r));
    }
  std::sort(regions.begin(), regions.end(), [](const Region& a, const Region& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.object_class != b.object_class) return a.object_class < b.object_class;
    return a.azimuth < b.azimuth;
  });
  if (static_cast<int>(regions.size()) > cfg.max_regions) regions.resize(cfg.max_regions);
  obs.regions = std::move(regions);
  return obs;
}

// ---------------------------------------------------------------------------
// task sampling

struct Task {
  std::string command;
  AgentPose start;
  std::string target;
};

inline const std::vector<std::string>& command_templates() {
  static const std::vector<std::string> k = {"go to the %", "move to the %",
                                             "please move to the %"};
  return k;
}

inline Task sample_task(const GridScene& scene, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  std::vector<std::pair<int, int>> free_cells;
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      if (scene.free_at(x, y)) free_cells.emplace_back(x, y);
  if (free_cells.empty()) throw ValidationError("sample_task: scene has no free cells");
  const auto [x, y] = free_cells[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int>(free_cells.size()) - 1))];
  Task t;
  t.start = AgentPose{x, y, rng.uniform_int(0, 7), 0};
  t.target = scene.targets[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int>(scene.targets.size()) - 1))];
  const std::string& tpl = command_templates()[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int>(command_templates().size()) - 1))];
  t.command = tpl;
  t.command.replace(t.command.find('%'), 1, t.target);
  return t;
}

// ---------------------------------------------------------------------------
// scene load / validation / save

inline void validate_scene(const GridScene& scene) {
  if (scene.width < 3 || scene.height < 3)
    throw ValidationError("scene " + scene.id + ": too small");
  if (std::find(room_types().begin(), room_types().end(), scene.room_type) == room_types().end())
    throw ValidationError("scene " + scene.id + ": unknown room type " + scene.room_type);
  for (int x = 0; x < scene.width; ++x)
    if (scene.at(x, 0).kind != CellKind::Wall || scene.at(x, scene.height - 1).kind != CellKind::Wall)
      throw ValidationError("scene " + scene.id + ": boundary cell is not a wall");
  for (int y = 0; y < scene.height; ++y)
    if (scene.at(0, y).kind != CellKind::Wall || scene.at(scene.width - 1, y).kind != CellKind::Wall)
      throw ValidationError("scene " + scene.id + ": boundary cell is not a wall");
  if (scene.targets.empty()) throw ValidationError("scene " + scene.id + ": empty target set");

  // free cells must form one connected component (8-connectivity, matching
  // agent movement), so sampled tasks are always solvable
  std::vector<std::pair<int, int>> free_cells;
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      if (scene.free_at(x, y)) free_cells.emplace_back(x, y);
  if (free_cells.empty()) throw ValidationError("scene " + scene.id + ": no free cells");
  std::vector<char> seen(static_cast<size_t>(scene.width) * scene.height, 0);
  std::queue<std::pair<int, int>> q;
  q.push(free_cells[0]);
  seen[static_cast<size_t>(free_cells[0].second) * scene.width + free_cells[0].first] = 1;
  size_t reached = 0;
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop();
    ++reached;
    for (int h = 0; h < 8; ++h) {
      auto d = heading_delta(h);
      const int nx = x + d[0], ny = y + d[1];
      if (scene.free_at(nx, ny) && !seen[static_cast<size_t>(ny) * scene.width + nx]) {
        seen[static_cast<size_t>(ny) * scene.width + nx] = 1;
        q.emplace(nx, ny);
      }
    }
  }
  if (reached != free_cells.size())
    throw ValidationError("scene " + scene.id + ": free cells are not connected");

  // every target class must be achievable: some free pose satisfies success
  for (const auto& target : scene.targets) {
    if (class_id(target) < 0)
      throw ValidationError("scene " + scene.id + ": unknown target class " + target);
    bool achievable = false;
    for (const auto& [x, y] : free_cells) {
      for (int h = 0; h < 8 && !achievable; ++h)
        achievable = is_success(scene, AgentPose{x, y, h, 0}, target);
      if (achievable) break;
    }
    if (!achievable)
      throw ValidationError("scene " + scene.id + ": target " + target +
                            " is unreachable (no pose satisfies the success test)");
  }
}

inline GridScene scene_from_json(const nlohmann::json& j) {
  GridScene s;
  try {
    s.id = j.at("id").get<std::string>();
    s.room_type = j.at("room_type").get<std::string>();
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.targets = j.at("targets").get<std::vector<std::string>>();
    const auto& rows = j.at("cells");
    if (static_cast<int>(rows.size()) != s.height)
      throw ParseError("scene " + s.id + ": cells row count " + std::to_string(rows.size()) +
                       " != height " + std::to_string(s.height));
    s.cells.resize(static_cast<size_t>(s.width) * s.height);
    for (int y = 0; y < s.height; ++y) {
      const auto& row = rows[static_cast<size_t>(y)];
      if (static_cast<int>(row.size()) != s.width)
        throw ParseError("scene " + s.id + ": row " + std::to_string(y) + " has " +
                         std::to_string(row.size()) + " cells, expected " +
                         std::to_string(s.width));
      for (int x = 0; x < s.width; ++x) {
        const int code = row[static_cast<size_t>(x)].get<int>();
        Cell c;
        if (code == 0) {
          c.kind = CellKind::Free;
        } else if (code == 1) {
          c.kind = CellKind::Wall;
        } else if (code >= 2 && code < 2 + static_cast<int>(object_classes().size())) {
          c.kind = CellKind::Object;
          c.object_class = code - 2;
        } else {
          throw ParseError("scene " + s.id + ": bad cell code " + std::to_string(code) +
                           " at row " + std::to_string(y) + " col " + std::to_string(x));
        }
        s.at(x, y) = c;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene parse error: ") + e.what());
  }
  validate_scene(s);
  return s;
}

inline GridScene scene_load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("scene_load: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scene_load: " + path + ": " + e.what());
  }
  return scene_from_json(j);
}

inline nlohmann::json scene_to_json(const GridScene& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (int y = 0; y < s.height; ++y) {
    nlohmann::json row = nlohmann::json::array();
    for (int x = 0; x < s.width; ++x) {
      const Cell& c = s.at(x, y);
      int code = 0;
      if (c.kind == CellKind::Wall) code = 1;
      if (c.kind == CellKind::Object) code = c.object_class + 2;
      row.push_back(code);
    }
    rows.push_back(std::move(row));
  }
  return nlohmann::json{{"id", s.id},
                        {"room_type", s.room_type},
                        {"width", s.width},
                        {"height", s.height},
                        {"cells", rows},
                        {"targets", s.targets}};
}

}  // namespace mvvin
