#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mvvin/model.hpp"
#include "mvvin/scenegen.hpp"

using namespace mvvin;

namespace {

GridScene corridor_scene() {
  // 14x5 corridor with a microwave at the east end
  GridScene s;
  s.id = "corridor";
  s.room_type = "kitchen";
  s.width = 14;
  s.height = 5;
  s.cells.assign(14 * 5, Cell{});
  for (int x = 0; x < 14; ++x) {
    s.at(x, 0).kind = CellKind::Wall;
    s.at(x, 4).kind = CellKind::Wall;
  }
  for (int y = 0; y < 5; ++y) {
    s.at(0, y).kind = CellKind::Wall;
    s.at(13, y).kind = CellKind::Wall;
  }
  s.at(12, 2).kind = CellKind::Object;
  s.at(12, 2).object_class = class_id("microwave");
  s.targets = {"microwave"};
  return s;
}

Task microwave_task(int start_x) {
  Task t;
  t.command = "go to the microwave";
  t.target = "microwave";
  t.start = AgentPose{start_x, 2, 0, 0};
  return t;
}

ParamSet zeroed_theta(const RunConfig& cfg) {
  ParamSet ps = init_theta(cfg, 0);
  for (auto& [name, t] : ps) std::fill(t->data.begin(), t->data.end(), 0.0);
  return ps;
}

// zero the policy weight and pin the bias so one action always wins argmax
ParamSet biased_theta(const RunConfig& cfg, Action a, std::uint64_t seed) {
  ParamSet ps = init_theta(cfg, seed);
  std::fill(ps.at("head.policy.w")->data.begin(), ps.at("head.policy.w")->data.end(), 0.0);
  std::fill(ps.at("head.policy.b")->data.begin(), ps.at("head.policy.b")->data.end(), 0.0);
  ps.at("head.policy.b")->data[static_cast<size_t>(a)] = 10.0;
  return ps;
}

}  // namespace

TEST_CASE("memory step with all-zero parameters") {
  const RunConfig cfg = desk_mini_config();
  const ParamSet ps = zeroed_theta(cfg);
  const TensorPtr e = zeros({cfg.embedding_dim()});
  MemoryState state = zero_state(cfg);
  auto [po, next] = memory_step(cfg, ps, e, -1, state);
  const TensorPtr probs = softmax(po.logits);
  for (double p : probs->data) CHECK(p == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(po.value->data[0] == 0.0);
  // zero weights keep the LSTM state at exactly zero across steps
  for (double h : next.h->data) CHECK(h == 0.0);
  auto [po2, next2] = memory_step(cfg, ps, e, 0, next);
  for (double h : next2.h->data) CHECK(h == 0.0);
  CHECK(po2.value->data[0] == 0.0);
}

TEST_CASE("memory step is deterministic and keeps h in (-1, 1)") {
  const RunConfig cfg = desk_mini_config();
  const ParamSet ps = init_theta(cfg, 7);
  Rng rng(3);
  std::vector<double> ed(static_cast<size_t>(cfg.embedding_dim()));
  for (double& x : ed) x = rng.normal();
  const TensorPtr e = tensor({cfg.embedding_dim()}, ed);
  auto [a1, s1] = memory_step(cfg, ps, e, 2, zero_state(cfg));
  auto [a2, s2] = memory_step(cfg, ps, e, 2, zero_state(cfg));
  CHECK(a1.logits->data == a2.logits->data);
  CHECK(s1.h->data == s2.h->data);
  for (double h : s1.h->data) {
    CHECK(h > -1.0);
    CHECK(h < 1.0);
  }
}

TEST_CASE("action selection") {
  Rng rng(1);
  PolicyOutput po;
  po.value = zeros({1});
  SUBCASE("argmax picks the best logit") {
    po.logits = tensor({6}, {0.1, 0.0, 2.5, -1.0, 0.3, 0.2});
    CHECK(select_action(po, SelectMode::Argmax, rng) == Action::RotateRight);
  }
  SUBCASE("argmax ties break toward the smallest index") {
    po.logits = tensor({6}, {1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
    CHECK(select_action(po, SelectMode::Argmax, rng) == Action::MoveAhead);
  }
  SUBCASE("sampling is reproducible and follows the distribution") {
    po.logits = tensor({6}, {50.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    for (int i = 0; i < 20; ++i)
      CHECK(select_action(po, SelectMode::Sample, rng) == Action::MoveAhead);
    po.logits = tensor({6}, {0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    Rng a(42), b(42);
    for (int i = 0; i < 20; ++i)
      CHECK(select_action(po, SelectMode::Sample, a) == select_action(po, SelectMode::Sample, b));
  }
}

TEST_CASE("immediate Done at a satisfying pose succeeds with zero path length") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = corridor_scene();
  const ParamSet ps = biased_theta(cfg, Action::Done, 5);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  Rng rng(8);
  const Trajectory traj =
      rollout(s, microwave_task(10), cfg, ps, 20, SelectMode::Argmax, rng, table, 13);
  CHECK(traj.done_signaled);
  CHECK(traj.success);
  CHECK_FALSE(traj.truncated);
  CHECK(traj.path_length == 0);
  REQUIRE(traj.steps.size() == 1);
  CHECK(traj.steps[0].reward == doctest::Approx(4.99));
}

TEST_CASE("Done far from the target fails without success reward") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = corridor_scene();
  const ParamSet ps = biased_theta(cfg, Action::Done, 5);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  Rng rng(8);
  const Trajectory traj =
      rollout(s, microwave_task(2), cfg, ps, 20, SelectMode::Argmax, rng, table, 13);
  CHECK(traj.done_signaled);
  CHECK_FALSE(traj.success);
  CHECK(traj.steps[0].reward == doctest::Approx(-0.01));
}

TEST_CASE("max_steps=1 truncates without a done signal") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = corridor_scene();
  const ParamSet ps = biased_theta(cfg, Action::MoveAhead, 5);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  Rng rng(8);
  const Trajectory traj =
      rollout(s, microwave_task(2), cfg, ps, 1, SelectMode::Argmax, rng, table, 13);
  CHECK(traj.truncated);
  CHECK_FALSE(traj.done_signaled);
  CHECK_FALSE(traj.success);
  CHECK(traj.steps.size() == 1);
  CHECK(traj.path_length == 1);
  CHECK(traj.steps[0].reward == doctest::Approx(-0.01));
}

TEST_CASE("segmented walk: three moves then Done") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = corridor_scene();
  const ParamSet walk = biased_theta(cfg, Action::MoveAhead, 5);
  const ParamSet stop = biased_theta(cfg, Action::Done, 5);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  Rng rng(8);
  // start 7 cells from the microwave: after 3 moves the distance is 4, inside
  // the success radius with a clear forward view
  EpisodeRunner runner(s, microwave_task(5), cfg, table, 13);
  for (int i = 0; i < 3; ++i) runner.do_step(walk, SelectMode::Argmax, rng, 0);
  runner.do_step(stop, SelectMode::Argmax, rng, 1);
  REQUIRE(runner.finished());
  const Trajectory traj = runner.take_trajectory();
  CHECK(traj.success);
  CHECK(traj.path_length == 3);
  REQUIRE(traj.steps.size() == 4);
  for (int i = 0; i < 3; ++i) {
    CHECK(traj.steps[static_cast<size_t>(i)].action == Action::MoveAhead);
    CHECK(traj.steps[static_cast<size_t>(i)].reward == doctest::Approx(-0.01));
    CHECK(traj.steps[static_cast<size_t>(i)].segment == 0);
    CHECK_FALSE(traj.steps[static_cast<size_t>(i)].collided);
  }
  CHECK(traj.steps[3].segment == 1);
  CHECK(traj.steps[3].reward == doctest::Approx(4.99));
  CHECK(traj.steps[3].pose.x == 8);

  SUBCASE("stepping a finished episode is an error") {
    EpisodeRunner done_runner(s, microwave_task(10), cfg, table, 13);
    done_runner.do_step(stop, SelectMode::Argmax, rng, 0);
    CHECK_THROWS_AS(done_runner.do_step(stop, SelectMode::Argmax, rng, 0), ValueError);
  }
}

TEST_CASE("collisions keep the pose and mark the step") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = corridor_scene();
  const ParamSet walk = biased_theta(cfg, Action::MoveAhead, 5);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  Rng rng(8);
  Task t = microwave_task(1);
  t.start.heading = 4;  // facing the west wall
  const Trajectory traj = rollout(s, t, cfg, walk, 3, SelectMode::Argmax, rng, table, 13);
  for (const StepRecord& rec : traj.steps) {
    CHECK(rec.collided);
    CHECK(rec.pose.x == 1);
  }
}

TEST_CASE("episode probability factorizes over steps") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = corridor_scene();
  const ParamSet ps = init_theta(cfg, 17);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  Rng rng(19);
  const Trajectory traj =
      rollout(s, microwave_task(4), cfg, ps, 12, SelectMode::Sample, rng, table, 13);
  REQUIRE_FALSE(traj.steps.empty());
  double prod = 1.0, logsum = 0.0;
  for (const StepRecord& rec : traj.steps) {
    CHECK(rec.prob > 0.0);
    CHECK(rec.prob <= 1.0);
    CHECK(rec.logprob == doctest::Approx(std::log(rec.prob)).epsilon(1e-10));
    prod *= rec.prob;
    logsum += rec.logprob;
  }
  CHECK(prod == doctest::Approx(std::exp(logsum)).epsilon(1e-10));
}

TEST_CASE("trajectory bookkeeping invariants") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = generate_scene("living_room", 23, "policy_scene");
  const ParamSet ps = init_theta(cfg, 29);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Task t = sample_task(s, seed);
    const Trajectory traj = rollout(s, t, cfg, ps, 15, SelectMode::Sample, rng, table, 13);
    REQUIRE(traj.steps.size() <= 15);
    CHECK(traj.done_signaled != traj.truncated);  // exactly one terminal cause
    CHECK(traj.path_length ==
          static_cast<int>(traj.steps.size()) - (traj.done_signaled ? 1 : 0));
    if (traj.success) CHECK(traj.done_signaled);
    for (const StepRecord& rec : traj.steps) {
      CHECK(rec.logits_snapshot.size() == 6);
      CHECK(s.free_at(rec.pose.x, rec.pose.y));
    }
  }
}

TEST_CASE("rollouts are bit-deterministic in the seeds") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = generate_scene("bedroom", 31, "det_scene");
  const ParamSet ps = init_theta(cfg, 37);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  const Task t = sample_task(s, 41);
  Rng r1(43), r2(43);
  const Trajectory a = rollout(s, t, cfg, ps, 20, SelectMode::Sample, r1, table, 13);
  const Trajectory b = rollout(s, t, cfg, ps, 20, SelectMode::Sample, r2, table, 13);
  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].action == b.steps[i].action);
    CHECK(a.steps[i].logits_snapshot == b.steps[i].logits_snapshot);  // bit-exact
    CHECK(a.steps[i].value_snapshot == b.steps[i].value_snapshot);
  }
}

TEST_CASE("teacher-forced replay reproduces the recorded forward pass") {
  const RunConfig cfg = desk_mini_config();
  const GridScene s = corridor_scene();
  const ParamSet ps = init_theta(cfg, 47);
  const EmbeddingTable table(cfg.modalities.target_dim_in, 4);
  Rng rng(53);
  const Trajectory traj =
      rollout(s, microwave_task(4), cfg, ps, 8, SelectMode::Sample, rng, table, 13);
  const ReplayOutput rep = replay(s, traj, cfg, ps, table, traj.steps.size());
  REQUIRE(rep.logits.size() == traj.steps.size());
  for (size_t i = 0; i < traj.steps.size(); ++i) {
    CHECK(rep.logits[i]->data == traj.steps[i].logits_snapshot);  // bit-exact
    CHECK(rep.value[i]->data[0] == traj.steps[i].value_snapshot);
  }
  // prefix replay stops where asked
  CHECK(replay(s, traj, cfg, ps, table, 2).logits.size() == std::min<size_t>(2, traj.steps.size()));
}
