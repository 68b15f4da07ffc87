#pragma once

#include <optional>
#include <string>
#include <vector>

#include "textpolicy/grammar.hpp"
#include "textpolicy/rng.hpp"

namespace textpolicy {

struct Stage {
  std::string source;
  std::string action;
  std::optional<int> label;
};

struct Trajectory {
  std::string id;
  std::vector<Stage> stages;
  int outcome = 0;
};

// View over a trajectory prefix for stage t (1-based); never stored.
struct History {
  const Trajectory* traj = nullptr;
  int t = 1;

  // Empty at the first stage; afterwards the interleaving
  // "source1 action1 ... action<t-1> source<t>" joined by single spaces.
  std::string flatten() const;
};

// All 2^stages polarity patterns, per_pattern trajectories each. Labels are
// recorded, actions start equal to sources, outcome counts positive labels.
std::vector<Trajectory> assemble_trajectories(const SignalGrammar& grammar,
                                              int stages, int per_pattern,
                                              SeededRng& rng);

// Evaluation set: one negative sentence per trajectory, the rest positive.
// variant "one-stage" pins the negative to stage 1; otherwise placement is
// uniform over stages.
std::vector<Trajectory> make_test_trajectories(const SignalGrammar& grammar,
                                               int stages, int count,
                                               const std::string& variant,
                                               SeededRng& rng);

// JSON lines, fixed field order, byte-stable for a given input.
void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajs);
std::vector<Trajectory> read_trajectories(const std::string& path);

}  // namespace textpolicy
