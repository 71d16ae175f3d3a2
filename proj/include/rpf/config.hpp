#pragma once

// Flat key-value run configuration with lossless round-tripping.
// File format: one `key = value` per line, '#' starts a comment.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "rpf/common.hpp"
#include "rpf/envgen.hpp"
#include "rpf/policy.hpp"

namespace rpf {

struct RunConfig {
  Task task = Task::Following;
  PolicyKind kind = PolicyKind::Rpf;
  double noise = 0.2;
  int traj_len = 30;  // J
  int horizon = 40;
  double clearance = 0.6;

  int encoder_width = 64;
  int gru_hidden = 128;
  double attention_span = 1e9;

  WorldSpec world;

  bool change_enabled = false;  // when false the execution world equals the demo world
  double r_demo = 0.5;
  double r_exec = 0.5;

  std::uint64_t train_lo = 0, train_hi = 100000;
  std::uint64_t val_lo = 100000, val_hi = 101000;
  std::uint64_t test_lo = 200000, test_hi = 200500;

  int iterations = 20000;  // desk-scale default; the original recipe used 120000
  int batch = 8;
  double lr = 1e-3;
  int checkpoint_every = 2000;
  int val_every = 1000;
  int val_trials = 48;

  std::uint64_t seed = 1;
  int workers = 1;
  std::string out = "out";
  std::string init_from;  // optional checkpoint dir to warm-start training from

  ModelConfig model() const {
    ModelConfig m;
    m.kind = kind;
    m.task = task;
    m.feat = encoder_width;
    m.hidden = gru_hidden;
    m.attention_span = attention_span;
    return m;
  }

  void validate() const {
    auto overlaps = [](std::uint64_t a0, std::uint64_t a1, std::uint64_t b0, std::uint64_t b1) {
      return a0 < b1 && b0 < a1;
    };
    if (overlaps(test_lo, test_hi, train_lo, train_hi) ||
        overlaps(test_lo, test_hi, val_lo, val_hi))
      throw ConfigError("test seed range must be disjoint from train/val ranges");
    if (noise < 0) throw ConfigError("noise must be >= 0");
    if (traj_len < 2) throw ConfigError("traj_len must be >= 2");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
  }

  std::map<std::string, std::string> to_map() const {
    auto fmt = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    std::map<std::string, std::string> m;
    m["task"] = task_name(task);
    m["policy.kind"] = policy_kind_name(kind);
    m["noise"] = fmt(noise);
    m["traj_len"] = std::to_string(traj_len);
    m["horizon"] = std::to_string(horizon);
    m["clearance"] = fmt(clearance);
    m["encoder.width"] = std::to_string(encoder_width);
    m["gru.hidden"] = std::to_string(gru_hidden);
    m["attention.span"] = fmt(attention_span);
    m["world.grid_w"] = std::to_string(world.grid_w);
    m["world.grid_h"] = std::to_string(world.grid_h);
    m["world.rooms"] = std::to_string(world.rooms);
    m["world.objects"] = std::to_string(world.object_count);
    m["world.door_width"] = std::to_string(world.door_width);
    m["change.enabled"] = change_enabled ? "1" : "0";
    m["change.r_demo"] = fmt(r_demo);
    m["change.r_exec"] = fmt(r_exec);
    m["seeds.train_lo"] = std::to_string(train_lo);
    m["seeds.train_hi"] = std::to_string(train_hi);
    m["seeds.val_lo"] = std::to_string(val_lo);
    m["seeds.val_hi"] = std::to_string(val_hi);
    m["seeds.test_lo"] = std::to_string(test_lo);
    m["seeds.test_hi"] = std::to_string(test_hi);
    m["train.iterations"] = std::to_string(iterations);
    m["train.batch"] = std::to_string(batch);
    m["train.lr"] = fmt(lr);
    m["train.checkpoint_every"] = std::to_string(checkpoint_every);
    m["train.val_every"] = std::to_string(val_every);
    m["train.val_trials"] = std::to_string(val_trials);
    m["seed"] = std::to_string(seed);
    m["workers"] = std::to_string(workers);
    m["out"] = out;
    // Only emitted when set so configs (and hashes) from cold-start runs
    // are unchanged by the existence of this option.
    if (!init_from.empty()) m["train.init_from"] = init_from;
    return m;
  }

  void set(const std::string& key, const std::string& value) {
    auto as_d = [&] { return std::stod(value); };
    auto as_i = [&] { return std::stoi(value); };
    auto as_u = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };
    if (key == "task") task = parse_task(value);
    else if (key == "policy.kind") kind = parse_policy_kind(value);
    else if (key == "noise") noise = as_d();
    else if (key == "traj_len") traj_len = as_i();
    else if (key == "horizon") horizon = as_i();
    else if (key == "clearance") clearance = as_d();
    else if (key == "encoder.width") encoder_width = as_i();
    else if (key == "gru.hidden") gru_hidden = as_i();
    else if (key == "attention.span") attention_span = as_d();
    else if (key == "world.grid_w") world.grid_w = as_i();
    else if (key == "world.grid_h") world.grid_h = as_i();
    else if (key == "world.rooms") world.rooms = as_i();
    else if (key == "world.objects") world.object_count = as_i();
    else if (key == "world.door_width") world.door_width = as_i();
    else if (key == "change.enabled") change_enabled = value == "1" || value == "true";
    else if (key == "change.r_demo") r_demo = as_d();
    else if (key == "change.r_exec") r_exec = as_d();
    else if (key == "seeds.train_lo") train_lo = as_u();
    else if (key == "seeds.train_hi") train_hi = as_u();
    else if (key == "seeds.val_lo") val_lo = as_u();
    else if (key == "seeds.val_hi") val_hi = as_u();
    else if (key == "seeds.test_lo") test_lo = as_u();
    else if (key == "seeds.test_hi") test_hi = as_u();
    else if (key == "train.iterations") iterations = as_i();
    else if (key == "train.batch") batch = as_i();
    else if (key == "train.lr") lr = as_d();
    else if (key == "train.checkpoint_every") checkpoint_every = as_i();
    else if (key == "train.val_every") val_every = as_i();
    else if (key == "train.val_trials") val_trials = as_i();
    else if (key == "seed") seed = as_u();
    else if (key == "workers") workers = as_i();
    else if (key == "out") out = value;
    else if (key == "train.init_from") init_from = value;
    else throw ConfigError("unknown config key: " + key);
  }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : to_map()) os << k << " = " << v << "\n";
    return os.str();
  }

  static RunConfig parse(std::istream& in) {
    RunConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (!key.empty()) cfg.set(key, value);
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw ConfigError("cannot open config file: " + path);
    return parse(in);
  }

  void save(const std::string& path) const {
    std::ofstream out_file(path);
    if (!out_file.good()) throw ConfigError("cannot write config file: " + path);
    out_file << serialize();
  }

  // FNV-1a over the serialized form, excluding run-environment fields (output
  // directory, worker count) that do not affect results; used in run
  // manifests and for checkpoint reuse.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [k, v] : to_map()) {
      if (k == "out" || k == "workers") continue;
      for (char c : k + " = " + v + "\n") {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
      }
    }
    return h;
  }
};

}  // namespace rpf
