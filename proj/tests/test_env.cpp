#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "mvvin/env.hpp"
#include "mvvin/scenegen.hpp"

using namespace mvvin;

namespace {

// rectangular room: boundary walls, free interior
GridScene make_room(int w, int h, const std::string& room_type = "kitchen") {
  GridScene s;
  s.id = "test_room";
  s.room_type = room_type;
  s.width = w;
  s.height = h;
  s.cells.assign(static_cast<size_t>(w) * h, Cell{});
  for (int x = 0; x < w; ++x) {
    s.at(x, 0).kind = CellKind::Wall;
    s.at(x, h - 1).kind = CellKind::Wall;
  }
  for (int y = 0; y < h; ++y) {
    s.at(0, y).kind = CellKind::Wall;
    s.at(w - 1, y).kind = CellKind::Wall;
  }
  return s;
}

void place(GridScene& s, int x, int y, const std::string& cls) {
  s.at(x, y).kind = CellKind::Object;
  s.at(x, y).object_class = class_id(cls);
}

nlohmann::json kitchen_fixture() {
  // 10x10 kitchen, microwave on the north wall, toaster on the east wall
  GridScene s = make_room(10, 10);
  place(s, 4, 1, "microwave");
  place(s, 8, 5, "toaster");
  s.targets = {"microwave", "toaster"};
  return scene_to_json(s);
}

// independent depth oracle: march along the ray in fine steps from the agent
// cell center until the first non-free cell, then apply the published
// distance model (center-to-center horizontal distance, vertical slant,
// diagonal cap)
double naive_depth(const GridScene& scene, const AgentPose& pose, double azimuth, double vdeg) {
  const double ox = pose.x + 0.5, oy = pose.y + 0.5;
  const double dx = std::cos(azimuth), dy = std::sin(azimuth);
  const double tmax = scene.width + scene.height + 4.0;
  int hx = -1, hy = -1;
  for (double t = 0.0; t < tmax; t += 0.004) {
    const int cx = static_cast<int>(std::floor(ox + dx * t));
    const int cy = static_cast<int>(std::floor(oy + dy * t));
    if (cx == pose.x && cy == pose.y) continue;
    if (!scene.in_bounds(cx, cy)) break;
    if (scene.at(cx, cy).kind != CellKind::Free) {
      hx = cx;
      hy = cy;
      break;
    }
  }
  REQUIRE(hx >= 0);
  const double horiz_m = std::hypot(hx - pose.x, hy - pose.y) * kCellSizeM;
  const double cv = std::cos(vdeg * M_PI / 180.0);
  return std::min(horiz_m / std::max(cv, 0.05), scene.diagonal_m());
}

}  // namespace

TEST_CASE("scene fixture loads and round-trips through json") {
  const nlohmann::json j = kitchen_fixture();
  const GridScene s = scene_from_json(j);
  CHECK(s.width == 10);
  CHECK(s.height == 10);
  CHECK(s.room_type == "kitchen");
  CHECK(s.targets == std::vector<std::string>{"microwave", "toaster"});
  CHECK(s.at(4, 1).kind == CellKind::Object);
  CHECK(s.at(4, 1).object_class == class_id("microwave"));
  CHECK(s.at(0, 0).kind == CellKind::Wall);
  CHECK(s.at(5, 5).kind == CellKind::Free);
  CHECK(scene_to_json(s) == j);  // lossless round trip
}

TEST_CASE("scene validation rejects malformed scenes") {
  SUBCASE("non-wall boundary") {
    nlohmann::json j = kitchen_fixture();
    j["cells"][0][3] = 0;
    CHECK_THROWS_AS(scene_from_json(j), ValidationError);
  }
  SUBCASE("sealed-off target is unreachable") {
    GridScene s = make_room(10, 10);
    place(s, 8, 5, "toaster");
    s.targets = {"microwave", "toaster"};
    // wall off the microwave in a corner pocket so no pose can ever see it
    place(s, 1, 1, "microwave");
    s.at(2, 1).kind = CellKind::Wall;
    s.at(1, 2).kind = CellKind::Wall;
    s.at(2, 2).kind = CellKind::Wall;
    CHECK_THROWS_AS(validate_scene(s), ValidationError);
  }
  SUBCASE("bad cell code") {
    nlohmann::json j = kitchen_fixture();
    j["cells"][5][5] = 99;
    CHECK_THROWS_AS(scene_from_json(j), ParseError);
  }
  SUBCASE("row count mismatch") {
    nlohmann::json j = kitchen_fixture();
    j["cells"].erase(9);
    CHECK_THROWS_AS(scene_from_json(j), ParseError);
  }
  SUBCASE("unknown target class") {
    nlohmann::json j = kitchen_fixture();
    j["targets"].push_back("spaceship");
    CHECK_THROWS_AS(scene_from_json(j), ValidationError);
  }
  SUBCASE("empty target set") {
    nlohmann::json j = kitchen_fixture();
    j["targets"] = nlohmann::json::array();
    CHECK_THROWS_AS(scene_from_json(j), ValidationError);
  }
  SUBCASE("disconnected free space") {
    GridScene s = make_room(10, 10);
    for (int y = 1; y < 9; ++y) s.at(5, y).kind = CellKind::Wall;
    place(s, 2, 1, "microwave");
    place(s, 8, 5, "toaster");
    s.targets = {"microwave"};
    CHECK_THROWS_AS(validate_scene(s), ValidationError);
  }
}

TEST_CASE("agent kinematics") {
  const GridScene s = make_room(10, 10);
  SUBCASE("blocked move collides and keeps the pose") {
    AgentPose p{1, 5, 4, 0};  // heading 4 = -x, wall at x=0
    StepResult r = step(s, p, Action::MoveAhead);
    CHECK(r.collided);
    CHECK(r.pose.x == 1);
    CHECK(r.pose.y == 5);
  }
  SUBCASE("free move advances one cell along the heading") {
    StepResult r = step(s, AgentPose{4, 4, 1, 0}, Action::MoveAhead);
    CHECK_FALSE(r.collided);
    CHECK(r.pose.x == 5);
    CHECK(r.pose.y == 5);
  }
  SUBCASE("eight left rotations are the identity") {
    AgentPose p{4, 4, 3, 0};
    for (int i = 0; i < 8; ++i) p = step(s, p, Action::RotateLeft).pose;
    CHECK(p.heading == 3);
    CHECK(p.x == 4);
    CHECK(p.y == 4);
  }
  SUBCASE("rotate right undoes rotate left") {
    AgentPose p{4, 4, 6, 0};
    p = step(s, p, Action::RotateLeft).pose;
    p = step(s, p, Action::RotateRight).pose;
    CHECK(p.heading == 6);
  }
  SUBCASE("pitch clamps at +/-30") {
    AgentPose p{4, 4, 0, 0};
    p = step(s, p, Action::LookDown).pose;
    CHECK(p.pitch == -30);
    p = step(s, p, Action::LookDown).pose;
    CHECK(p.pitch == -30);
    for (int i = 0; i < 3; ++i) p = step(s, p, Action::LookUp).pose;
    CHECK(p.pitch == 30);
  }
  SUBCASE("done signals without moving") {
    StepResult r = step(s, AgentPose{4, 4, 0, 0}, Action::Done);
    CHECK(r.done_signaled);
    CHECK(r.pose.x == 4);
    CHECK(r.pose.heading == 0);
  }
}

TEST_CASE("pose stays valid under random action sequences") {
  const GridScene s = generate_scene("kitchen", 77, "prop_kitchen");
  Rng rng(123);
  const Task t = sample_task(s, 9);
  AgentPose p = t.start;
  for (int i = 0; i < 500; ++i) {
    const Action a = static_cast<Action>(rng.uniform_int(0, kNumActions - 1));
    p = step(s, p, a).pose;
    REQUIRE(s.free_at(p.x, p.y));
    REQUIRE(p.heading >= 0);
    REQUIRE(p.heading < 8);
    REQUIRE((p.pitch == -30 || p.pitch == 0 || p.pitch == 30));
  }
}

TEST_CASE("success geometry") {
  GridScene s = make_room(14, 14);
  place(s, 8, 6, "microwave");
  s.targets = {"microwave"};

  CHECK(is_success(s, AgentPose{6, 6, 0, 0}, "microwave"));        // 2 ahead
  CHECK_FALSE(is_success(s, AgentPose{10, 6, 0, 0}, "microwave"));  // 2 behind
  CHECK_FALSE(is_success(s, AgentPose{2, 6, 0, 0}, "microwave"));   // 6 away > 4
  CHECK(is_success(s, AgentPose{4, 6, 0, 0}, "microwave"));         // exactly 4
  CHECK_FALSE(is_success(s, AgentPose{6, 6, 2, 0}, "microwave"));   // 90deg off axis
  CHECK(is_success(s, AgentPose{6, 4, 1, 0}, "microwave"));         // diagonal, heading 45
  CHECK_FALSE(is_success(s, AgentPose{6, 6, 0, 0}, "toaster"));     // wrong class

  SUBCASE("occluded target fails the line-of-sight test") {
    s.at(7, 6).kind = CellKind::Wall;
    CHECK_FALSE(is_success(s, AgentPose{5, 6, 0, 0}, "microwave"));
  }
  SUBCASE("success is monotone when approaching along a clear axis") {
    bool seen = false;
    for (int x = 2; x <= 7; ++x) {
      const bool ok = is_success(s, AgentPose{x, 6, 0, 0}, "microwave");
      if (seen) CHECK(ok);  // once inside the radius, stays successful
      seen = seen || ok;
    }
    CHECK(seen);
  }
}

TEST_CASE("depth: center ray against a wall two cells ahead reads 0.5m") {
  const GridScene s = make_room(8, 8);
  const Observation obs = render_observation(s, AgentPose{5, 3, 0, 0}, 42);
  REQUIRE(obs.depth_rows == 24);
  REQUIRE(obs.depth_cols == 32);
  // rows/columns closest to the optical axis sit ~1.3deg off it
  for (int i : {11, 12})
    for (int j : {15, 16}) {
      const double d = obs.depth_map[static_cast<size_t>(i) * obs.depth_cols + j];
      CHECK(d >= 0.5);
      CHECK(d == doctest::Approx(0.5).epsilon(0.01));
    }
}

TEST_CASE("depth map matches a naive ray-marching oracle") {
  const RenderConfig cfg;
  const double fov = kFovDeg * M_PI / 180.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const GridScene s = generate_scene("living_room", seed, "oracle_scene");
    for (std::uint64_t task_seed : {10u, 11u, 12u}) {
      Task t = sample_task(s, task_seed);
      t.start.pitch = static_cast<int>(task_seed % 3) * 30 - 30;
      const Observation obs = render_observation(s, t.start, 7);
      const double ha = heading_angle_rad(t.start.heading);
      for (int i = 0; i < cfg.depth_rows; i += 5)
        for (int j = 0; j < cfg.depth_cols; ++j) {
          const double az = ha - fov / 2.0 + (j + 0.5) * fov / cfg.depth_cols;
          const double vdeg = t.start.pitch + (-30.0 + (i + 0.5) * 60.0 / cfg.depth_rows);
          const double expect = naive_depth(s, t.start, az, vdeg);
          const double got = obs.depth_map[static_cast<size_t>(i) * cfg.depth_cols + j];
          REQUIRE(got == doctest::Approx(expect).epsilon(1e-9));
        }
    }
  }
}

TEST_CASE("depth values never exceed the scene diagonal") {
  const GridScene s = make_room(12, 12);
  const Observation obs = render_observation(s, AgentPose{2, 2, 1, -30}, 42);
  bool capped = false;
  for (double d : obs.depth_map) {
    CHECK(d <= s.diagonal_m() + 1e-12);
    CHECK(d > 0.0);
    capped = capped || d == s.diagonal_m();
  }
  CHECK(capped);  // steep rows at pitch -30 must hit the cap in this room
}

TEST_CASE("segmentation features are visible-class fractions") {
  GridScene s = make_room(12, 12);
  place(s, 9, 5, "microwave");
  place(s, 9, 6, "toaster");
  s.targets = {"microwave", "toaster"};
  const Observation obs = render_observation(s, AgentPose{3, 5, 0, 0}, 42);
  REQUIRE(static_cast<int>(obs.seg_feat.size()) == RenderConfig{}.seg_dim);
  double total = 0.0;
  for (double f : obs.seg_feat) {
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    total += f;
  }
  CHECK(total <= 1.0 + 1e-6);
  CHECK(obs.seg_feat[static_cast<size_t>(class_id("microwave"))] > 0.0);
  CHECK(obs.seg_feat[static_cast<size_t>(class_id("toaster"))] > 0.0);
  CHECK(obs.seg_feat[static_cast<size_t>(class_id("fridge"))] == 0.0);

  SUBCASE("facing away sees neither class") {
    const Observation back = render_observation(s, AgentPose{3, 5, 4, 0}, 42);
    for (double f : back.seg_feat) CHECK(f == 0.0);
  }
}

TEST_CASE("region proposals") {
  GridScene s = make_room(12, 12);
  place(s, 6, 5, "microwave");
  place(s, 9, 8, "toaster");
  place(s, 8, 2, "kettle");
  s.targets = {"microwave"};
  const Observation obs = render_observation(s, AgentPose{3, 5, 0, 0}, 42);
  REQUIRE(obs.regions.size() == 3);
  for (size_t i = 1; i < obs.regions.size(); ++i)
    CHECK(obs.regions[i - 1].confidence >= obs.regions[i].confidence);
  CHECK(obs.regions[0].object_class == class_id("microwave"));  // nearest wins
  for (const Region& r : obs.regions) {
    CHECK(r.confidence > 0.0);
    CHECK(r.confidence <= 1.0);
    CHECK(static_cast<int>(r.feature.size()) == RenderConfig{}.region_feature_dim);
    for (double b : r.box) {
      CHECK(b >= 0.0);
      CHECK(b <= 1.0);
    }
    CHECK(std::fabs(r.azimuth) <= kFovDeg / 2.0 * M_PI / 180.0 + 1e-9);
  }
  SUBCASE("confidence follows 1/(1+dist_m)") {
    CHECK(obs.regions[0].confidence == doctest::Approx(1.0 / (1.0 + 3 * kCellSizeM)));
  }
  SUBCASE("nothing in the field of view yields no regions") {
    const Observation back = render_observation(s, AgentPose{3, 5, 4, 0}, 42);
    CHECK(back.regions.empty());
  }
  SUBCASE("occluded object is not proposed") {
    s.at(6, 7).kind = CellKind::Wall;  // sits on the ray to the toaster
    const Observation occ = render_observation(s, AgentPose{3, 5, 0, 0}, 42);
    for (const Region& r : occ.regions) CHECK(r.object_class != class_id("toaster"));
  }
  SUBCASE("region count is capped at 7") {
    GridScene crowd = make_room(14, 14);
    for (int y = 3; y <= 11; ++y) place(crowd, 11, y, "kettle");
    crowd.targets = {"kettle"};
    const Observation o = render_observation(crowd, AgentPose{3, 7, 0, 0}, 42);
    CHECK(o.regions.size() == 7);
  }
}

TEST_CASE("rendering is deterministic in the encoder seed") {
  const GridScene s = scene_from_json(kitchen_fixture());
  const AgentPose p{5, 4, 7, 0};
  const Observation a = render_observation(s, p, 1234);
  const Observation b = render_observation(s, p, 1234);
  CHECK(a.rgb_feat == b.rgb_feat);
  CHECK(a.depth_map == b.depth_map);
  CHECK(a.seg_feat == b.seg_feat);
  REQUIRE(a.regions.size() == b.regions.size());
  for (size_t i = 0; i < a.regions.size(); ++i)
    CHECK(a.regions[i].feature == b.regions[i].feature);

  const Observation c = render_observation(s, p, 1235);
  CHECK(a.rgb_feat != c.rgb_feat);   // rgb texture is seed-conditioned
  CHECK(a.depth_map == c.depth_map);  // geometry is not
  CHECK(a.seg_feat == c.seg_feat);
}

TEST_CASE("rgb feature tensor shape and range") {
  const GridScene s = scene_from_json(kitchen_fixture());
  const Observation obs = render_observation(s, AgentPose{5, 4, 2, 0}, 42);
  CHECK(obs.rgb_shape == std::vector<int>{8, 7, 7});
  REQUIRE(obs.rgb_feat.size() == 8u * 7u * 7u);
  for (double v : obs.rgb_feat) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("task sampling") {
  const GridScene s = scene_from_json(kitchen_fixture());
  SUBCASE("deterministic in the seed") {
    const Task a = sample_task(s, 99);
    const Task b = sample_task(s, 99);
    CHECK(a.command == b.command);
    CHECK(a.target == b.target);
    CHECK(a.start.x == b.start.x);
    CHECK(a.start.y == b.start.y);
    CHECK(a.start.heading == b.start.heading);
  }
  SUBCASE("samples stay inside the scene contract") {
    std::set<std::string> targets;
    std::set<std::pair<int, int>> starts;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      const Task t = sample_task(s, seed);
      REQUIRE(s.free_at(t.start.x, t.start.y));
      REQUIRE(t.start.pitch == 0);
      REQUIRE(std::find(s.targets.begin(), s.targets.end(), t.target) != s.targets.end());
      REQUIRE(t.command.find(t.target) != std::string::npos);
      targets.insert(t.target);
      starts.insert({t.start.x, t.start.y});
    }
    CHECK(targets.size() == s.targets.size());  // both targets get sampled
    CHECK(starts.size() > 20);                  // start poses spread out
  }
}

TEST_CASE("generated scenes validate and stay deterministic") {
  for (const std::string& room : room_types()) {
    const GridScene a = generate_scene(room, 5, "gen_" + room);
    CHECK_NOTHROW(validate_scene(a));
    CHECK(a.room_type == room);
    CHECK_FALSE(a.targets.empty());
    const GridScene b = generate_scene(room, 5, "gen_" + room);
    CHECK(scene_to_json(a) == scene_to_json(b));
    const GridScene c = generate_scene(room, 6, "gen_" + room);
    CHECK(scene_to_json(a) != scene_to_json(c));
  }
}
