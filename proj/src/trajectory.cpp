#include "textpolicy/trajectory.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "textpolicy/errors.hpp"

namespace textpolicy {

std::string History::flatten() const {
  if (!traj) throw Error("history without a trajectory");
  if (t < 1 || t > static_cast<int>(traj->stages.size())) {
    throw Error("history stage " + std::to_string(t) + " out of range");
  }
  if (t == 1) return "";
  std::string out;
  for (int s = 0; s < t - 1; ++s) {
    if (!out.empty()) out += ' ';
    out += traj->stages[static_cast<size_t>(s)].source;
    out += ' ';
    out += traj->stages[static_cast<size_t>(s)].action;
  }
  out += ' ';
  out += traj->stages[static_cast<size_t>(t - 1)].source;
  return out;
}

namespace {

std::string seq_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05d", prefix, i);
  return buf;
}

}  // namespace

std::vector<Trajectory> assemble_trajectories(const SignalGrammar& grammar,
                                              int stages, int per_pattern,
                                              SeededRng& rng) {
  if (stages < 1 || stages > 16) throw ConfigError("stage count out of range");
  if (per_pattern < 1) throw ConfigError("per-pattern count must be positive");
  std::vector<Trajectory> out;
  int patterns = 1 << stages;
  out.reserve(static_cast<size_t>(patterns) * per_pattern);
  int idx = 0;
  for (int pattern = patterns - 1; pattern >= 0; --pattern) {
    for (int i = 0; i < per_pattern; ++i) {
      Trajectory traj;
      traj.id = seq_id("train", idx++);
      for (int s = 0; s < stages; ++s) {
        int polarity = (pattern >> (stages - 1 - s)) & 1;
        Stage st;
        st.source = grammar.generate(polarity, rng);
        st.action = st.source;
        st.label = polarity;
        traj.stages.push_back(std::move(st));
        traj.outcome += polarity;
      }
      out.push_back(std::move(traj));
    }
  }
  return out;
}

std::vector<Trajectory> make_test_trajectories(const SignalGrammar& grammar,
                                               int stages, int count,
                                               const std::string& variant,
                                               SeededRng& rng) {
  if (stages < 1) throw ConfigError("stage count must be positive");
  if (count < 1) throw ConfigError("test count must be positive");
  bool pin_first = variant == "one-stage";
  std::vector<Trajectory> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    int neg_stage = pin_first ? 0 : static_cast<int>(rng.uniform_int(static_cast<uint64_t>(stages)));
    Trajectory traj;
    traj.id = seq_id("test", i);
    for (int s = 0; s < stages; ++s) {
      int polarity = s == neg_stage ? 0 : 1;
      Stage st;
      st.source = grammar.generate(polarity, rng);
      st.action = st.source;
      st.label = polarity;
      traj.stages.push_back(std::move(st));
      traj.outcome += polarity;
    }
    out.push_back(std::move(traj));
  }
  return out;
}

void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const Trajectory& traj : trajs) {
    nlohmann::ordered_json j;
    j["id"] = traj.id;
    nlohmann::ordered_json stages = nlohmann::ordered_json::array();
    for (const Stage& st : traj.stages) {
      nlohmann::ordered_json s;
      s["source"] = st.source;
      s["action"] = st.action;
      if (st.label) s["label"] = *st.label;
      stages.push_back(std::move(s));
    }
    j["stages"] = std::move(stages);
    j["outcome"] = traj.outcome;
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("write failed for " + path);
}

std::vector<Trajectory> read_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<Trajectory> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("stages") ||
        !j.contains("outcome")) {
      throw DataError(where + ": expected id, stages, outcome");
    }
    Trajectory traj;
    if (!j["id"].is_string() || j["id"].get<std::string>().empty()) {
      throw DataError(where + ": bad id");
    }
    traj.id = j["id"].get<std::string>();
    if (!j["stages"].is_array() || j["stages"].empty()) {
      throw DataError(where + ": stages must be a non-empty array");
    }
    for (const auto& s : j["stages"]) {
      if (!s.is_object() || !s.contains("source") || !s.contains("action") ||
          !s["source"].is_string() || !s["action"].is_string()) {
        throw DataError(where + ": each stage needs source and action strings");
      }
      Stage st;
      st.source = s["source"].get<std::string>();
      st.action = s["action"].get<std::string>();
      if (s.contains("label")) {
        if (!s["label"].is_number_integer()) throw DataError(where + ": label must be an integer");
        int lab = s["label"].get<int>();
        if (lab != 0 && lab != 1) throw DataError(where + ": label must be 0 or 1");
        st.label = lab;
      }
      traj.stages.push_back(std::move(st));
    }
    if (!j["outcome"].is_number_integer()) throw DataError(where + ": outcome must be an integer");
    traj.outcome = j["outcome"].get<int>();
    int T = static_cast<int>(traj.stages.size());
    if (traj.outcome < 0 || traj.outcome > T) {
      throw DataError(where + ": outcome " + std::to_string(traj.outcome) +
                      " outside [0, " + std::to_string(T) + "]");
    }
    out.push_back(std::move(traj));
  }
  return out;
}

}  // namespace textpolicy
