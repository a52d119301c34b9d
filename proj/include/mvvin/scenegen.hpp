#pragma once

// Procedural scene generation and the on-disk scene pack layout
// (<pack>/{train,val,test}/*.json, loaded in sorted filename order).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mvvin/env.hpp"

namespace mvvin {

// One room: rectangular shell, a few interior wall stubs, every vocabulary
// object placed against a wall. Retries until validate_scene accepts.
inline GridScene generate_scene(const std::string& room_type, std::uint64_t seed,
                                const std::string& id) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    GridScene s;
    s.id = id;
    s.room_type = room_type;
    s.width = rng.uniform_int(9, 14);
    s.height = rng.uniform_int(9, 14);
    s.cells.assign(static_cast<size_t>(s.width) * s.height, Cell{});
    for (int x = 0; x < s.width; ++x) {
      s.at(x, 0).kind = CellKind::Wall;
      s.at(x, s.height - 1).kind = CellKind::Wall;
    }
    for (int y = 0; y < s.height; ++y) {
      s.at(0, y).kind = CellKind::Wall;
      s.at(s.width - 1, y).kind = CellKind::Wall;
    }
    // interior wall stubs growing inward from the shell
    const int stubs = rng.uniform_int(0, 3);
    for (int i = 0; i < stubs; ++i) {
      const int side = rng.uniform_int(0, 3);
      const int len = rng.uniform_int(2, 3);
      int x, y, dx = 0, dy = 0;
      switch (side) {
        case 0: x = rng.uniform_int(2, s.width - 3), y = 1, dy = 1; break;
        case 1: x = rng.uniform_int(2, s.width - 3), y = s.height - 2, dy = -1; break;
        case 2: x = 1, y = rng.uniform_int(2, s.height - 3), dx = 1; break;
        default: x = s.width - 2, y = rng.uniform_int(2, s.height - 3), dx = -1; break;
      }
      for (int j = 0; j < len && s.in_bounds(x, y); ++j, x += dx, y += dy)
        s.at(x, y).kind = CellKind::Wall;
    }
    // objects against walls: each vocabulary class once
    const auto& vocab = room_vocabulary(room_type);
    bool placed_all = true;
    for (const auto& cls : vocab) {
      bool placed = false;
      for (int tries = 0; tries < 128 && !placed; ++tries) {
        const int x = rng.uniform_int(1, s.width - 2);
        const int y = rng.uniform_int(1, s.height - 2);
        if (s.at(x, y).kind != CellKind::Free) continue;
        bool near_wall = false;
        for (int h = 0; h < 8 && !near_wall; ++h) {
          auto d = heading_delta(h);
          near_wall = s.in_bounds(x + d[0], y + d[1]) &&
                      s.at(x + d[0], y + d[1]).kind == CellKind::Wall;
        }
        if (!near_wall) continue;
        s.at(x, y).kind = CellKind::Object;
        s.at(x, y).object_class = class_id(cls);
        placed = true;
      }
      placed_all = placed_all && placed;
    }
    if (!placed_all) continue;
    s.targets = vocab;
    try {
      validate_scene(s);
      return s;
    } catch (const ValidationError&) {
      // layout rejected (disconnected or unreachable target); try again
    }
  }
  throw ValidationError("generate_scene: could not build a valid " + room_type + " scene for " +
                        id);
}

struct ScenePack {
  std::vector<GridScene> train, val, test;
};

inline std::vector<GridScene> load_scene_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ParseError("scene pack: missing directory " + dir);
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  std::vector<GridScene> out;
  for (const auto& p : paths) out.push_back(scene_load(p));
  return out;
}

inline ScenePack load_scene_pack(const std::string& root) {
  ScenePack p;
  p.train = load_scene_dir(root + "/train");
  p.val = load_scene_dir(root + "/val");
  p.test = load_scene_dir(root + "/test");
  if (p.train.empty() || p.val.empty() || p.test.empty())
    throw ParseError("scene pack " + root + ": every split must be non-empty");
  // splits must be disjoint by scene id
  std::set<std::string> train_ids;
  for (const auto& s : p.train) train_ids.insert(s.id);
  for (const auto& s : p.val)
    if (train_ids.count(s.id))
      throw ValidationError("scene pack: val scene " + s.id + " overlaps train");
  for (const auto& s : p.test)
    if (train_ids.count(s.id))
      throw ValidationError("scene pack: test scene " + s.id + " overlaps train");
  return p;
}

inline std::set<std::string> scene_ids(const std::vector<GridScene>& scenes) {
  std::set<std::string> ids;
  for (const auto& s : scenes) ids.insert(s.id);
  return ids;
}

// write a full pack: per room type, `train`/`val`/`test` scenes each
inline void write_scene_pack(const std::string& root, std::uint64_t seed, int n_train, int n_val,
                             int n_test) {
  namespace fs = std::filesystem;
  struct Split {
    const char* name;
    int count;
  };
  const Split splits[] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
  for (const auto& sp : splits) {
    fs::create_directories(root + "/" + sp.name);
    for (const auto& room : room_types()) {
      for (int i = 0; i < sp.count; ++i) {
        const std::string id =
            std::string(sp.name) + "_" + room + "_" + (i < 10 ? "0" : "") + std::to_string(i);
        GridScene s = generate_scene(room, mix_seed(seed, fnv1a(id)), id);
        const std::string path = root + "/" + sp.name + "/" + id + ".json";
        std::ofstream f(path);
        if (!f) throw ParseError("write_scene_pack: cannot write " + path);
        f << scene_to_json(s).dump(0) << '\n';
      }
    }
  }
}

}  // namespace mvvin
