#pragma once

// Imitation training: on-policy rollouts labeled with "good action" sets
// derived from the geodesic distance field, multi-label log loss, Adam.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "rpf/common.hpp"
#include "rpf/config.hpp"
#include "rpf/eval.hpp"

namespace rpf {

// An action is good when its noiseless successor reduces geodesic distance
// strictly more than Forward would. If nothing beats Forward, fall back to
// the set of maximizers (Stay has gain 0, so the set is never empty).
inline std::vector<Action> good_actions(const World& world, const std::vector<int32_t>& field,
                                        const Pose& pose) {
  int32_t d_here = distance_at(world, field, pose);
  check(d_here >= 0, "good_actions: pose off the reachable field");
  NoiseSpec noiseless;
  noiseless.level = 0.0;
  Rng rng = make_rng(0, 0);  // unused at noise level 0
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  double gain[kNumActions];
  for (int a = 0; a < kNumActions; ++a) {
    StepResult sr = step(world, pose, static_cast<Action>(a), noiseless, rng);
    int32_t d_next = distance_at(world, field, sr.pose);
    gain[a] = d_next < 0 ? kNegInf : static_cast<double>(d_here - d_next);
  }
  std::vector<Action> good;
  for (int a = 0; a < kNumActions; ++a)
    if (gain[a] > gain[static_cast<int>(Action::Forward)]) good.push_back(static_cast<Action>(a));
  if (good.empty()) {
    double best = *std::max_element(gain, gain + kNumActions);
    for (int a = 0; a < kNumActions; ++a)
      if (gain[a] == best) good.push_back(static_cast<Action>(a));
  }
  return good;
}

constexpr Real kLossEps = Real(1e-8);

// -log(sum of probabilities over the good set + eps).
inline Tape::Id step_loss(Tape& tape, Tape::Id probs, const std::vector<Action>& good) {
  std::vector<Tape::Id> picked;
  for (Action a : good) picked.push_back(tape.slice(probs, static_cast<int>(a), 1));
  Tape::Id mass = picked.size() == 1 ? picked[0] : tape.sum(tape.concat(picked));
  return tape.neg(tape.log_(tape.add(mass, tape.scalar(kLossEps))));
}

// Rebuildable full-pipeline loss (phi, psi, attention, controller, loss)
// over a fixed observation/label sequence, for gradient checking.
inline LossBuilder episode_loss_builder(ModelConfig model, MemorySpec mem,
                                        std::vector<Observation> obs_seq,
                                        std::vector<std::vector<Action>> labels) {
  check(obs_seq.size() == labels.size() && !obs_seq.empty(),
        "episode_loss_builder: sequence mismatch");
  return [model = std::move(model), mem = std::move(mem), obs_seq = std::move(obs_seq),
          labels = std::move(labels)](Tape& tape, const std::map<std::string, Tape::Id>& ids) {
    RpfEpisode ep(model, tape, ids, mem);
    std::vector<Tape::Id> terms;
    for (size_t t = 0; t < obs_seq.size(); ++t) {
      Tape::Id probs = tape.softmax(ep.step_logits(obs_seq[t]));
      terms.push_back(step_loss(tape, probs, labels[t]));
    }
    return tape.scale(tape.sum(tape.concat(terms)), Real(1.0 / terms.size()));
  };
}

// Canonical full-pipeline gradient-check problem: a short fixed episode in a
// generated world. Deterministic across builds (geometry is always double),
// so 32- and 64-bit builds can compare gradients on identical inputs after a
// checkpoint round trip pins the parameters to float32 values.
struct GradCheckProblem {
  ModelConfig model;
  MemorySpec memory;
  std::vector<Observation> obs;
  std::vector<std::vector<Action>> labels;
  ParamMap params;
};

inline GradCheckProblem make_gradcheck_problem(std::uint64_t seed = 3) {
  RunConfig cfg;
  cfg.traj_len = 6;
  cfg.horizon = 4;
  GradCheckProblem pr;
  pr.model = cfg.model();
  pr.params = init_params(pr.model, seed);
  // Jitter every parameter (biases start at zero) so no ReLU preactivation
  // sits exactly on its kink, where finite differences are ill-defined.
  Rng jitter = make_rng(seed, 0x6A);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& [name, v] : pr.params)
    for (Real& x : v.data) x += static_cast<Real>(u(jitter));
  TrialSetup setup;
  for (std::uint64_t k = 0; k < 32 && !setup.valid; ++k)
    setup = make_trial_setup(cfg, 70 + k, derive_seed(seed, k), derive_seed(seed, 0xC0 + k));
  check(setup.valid, "gradcheck problem: no valid episode found");
  pr.memory = setup.memory;
  Pose pose = setup.start;
  NoiseSpec noiseless;
  noiseless.level = 0.0;
  Rng rng = make_rng(0, 0);
  for (int t = 0; t < cfg.horizon; ++t) {
    pr.obs.push_back(render(setup.exec_world, pose));
    pr.labels.push_back(good_actions(setup.exec_world, setup.field, pose));
    pose = step(setup.exec_world, pose, pr.labels.back().front(), noiseless, rng).pose;
  }
  return pr;
}

struct EpisodeGrads {
  ParamMap grads;
  double loss = 0.0;
  int steps = 0;
  bool valid = false;
};

// One on-policy training episode: the executed action is sampled from the
// policy's own distribution; labels come from the distance field at each
// visited pose. Episodes that wander off the reachable field are dropped.
inline EpisodeGrads run_training_episode(const RunConfig& cfg, const ModelConfig& model,
                                         const ParamMap& params, std::uint64_t world_seed,
                                         std::uint64_t demo_seed, std::uint64_t change_seed,
                                         std::uint64_t rollout_seed) {
  EpisodeGrads out;
  TrialSetup setup = make_trial_setup(cfg, world_seed, demo_seed, change_seed);
  if (!setup.valid) return out;

  NoiseSpec noise;
  noise.level = cfg.noise;
  Rng rng = make_rng(rollout_seed, 0x7A);
  Pose pose = setup.start;

  Tape* tape = nullptr;
  std::unique_ptr<RpfEpisode> rpf;
  std::unique_ptr<NearestNeighborEpisode> nn;
  std::function<Tape::Id(const Observation&)> probs_fn;
  const std::map<std::string, Tape::Id>* pids = nullptr;
  if (cfg.kind == PolicyKind::NearestNeighbor) {
    nn = std::make_unique<NearestNeighborEpisode>(model, params, setup.memory);
    tape = &nn->tape();
    pids = &nn->param_ids();
    probs_fn = [&](const Observation& o) { return nn->step_probs(o); };
  } else {
    rpf = std::make_unique<RpfEpisode>(model, params, setup.memory);
    tape = &rpf->tape();
    pids = &rpf->param_ids();
    probs_fn = [&](const Observation& o) { return tape->softmax(rpf->step_logits(o)); };
  }

  std::vector<Tape::Id> terms;
  for (int t = 0; t < cfg.horizon; ++t) {
    if (distance_at(setup.exec_world, setup.field, pose) < 0) return out;
    Observation obs = render(setup.exec_world, pose);
    Tape::Id probs = probs_fn(obs);
    terms.push_back(step_loss(*tape, probs, good_actions(setup.exec_world, setup.field, pose)));
    const Tensor& pv = tape->value(probs);
    std::discrete_distribution<int> pick(pv.data.begin(), pv.data.end());
    Action a = static_cast<Action>(pick(rng));
    pose = step(setup.exec_world, pose, a, noise, rng).pose;
  }

  Tape::Id loss = tape->scale(tape->sum(tape->concat(terms)), Real(1.0 / terms.size()));
  out.loss = static_cast<double>(tape->value(loss).data[0]);
  if (!std::isfinite(out.loss)) return out;
  tape->backward(loss);
  for (const auto& [name, id] : *pids) out.grads[name] = tape->grad(id);
  out.steps = static_cast<int>(terms.size());
  out.valid = true;
  return out;
}

struct TrainResult {
  ParamMap params;
  std::string final_checkpoint;
  bool aborted = false;  // NaN loss or gradient; params hold the last good state
  double last_loss = 0.0;
  double last_val_success = -1.0;
};

using TrainCallback = std::function<void(long iter, double loss, double val_success)>;

// Batched imitation loop. Episode seeds derive from (cfg.seed, iteration,
// slot) and gradients are averaged in slot order, so any worker count
// reproduces the single-worker result bit for bit.
inline TrainResult train(const RunConfig& cfg, const std::string& out_dir, int workers = 1,
                         const TrainCallback& callback = nullptr) {
  cfg.validate();
  ModelConfig model = cfg.model();
  check(model.kind != PolicyKind::OpenLoop, "open loop has no trainable parameters");
  ParamMap params =
      cfg.init_from.empty() ? init_params(model, cfg.seed) : load_checkpoint(cfg.init_from);
  AdamState adam;
  adam.lr = cfg.lr;
  std::filesystem::create_directories(out_dir);

  std::uint64_t train_range = cfg.train_hi - cfg.train_lo;
  check(train_range > 0, "empty train seed range");
  RunConfig val_cfg = cfg;
  val_cfg.test_lo = cfg.val_lo;
  val_cfg.test_hi = cfg.val_hi;

  std::string metrics_csv = "iteration,loss,val_success\n";
  auto flush_metrics = [&] {
    std::ofstream f(out_dir + "/metrics.csv");
    f << metrics_csv;
  };

  TrainResult result;
  result.params = params;
  std::vector<EpisodeGrads> slots(cfg.batch);
  for (long iter = 0; iter < cfg.iterations; ++iter) {
    // One base world per iteration; each batch slot draws its own
    // demonstration (and change variant) in that world.
    std::uint64_t world_seed =
        cfg.train_lo + derive_seed(cfg.seed, 0x10000000ULL + iter) % train_range;

    std::atomic<int> next{0};
    auto worker = [&] {
      for (;;) {
        int e = next.fetch_add(1);
        if (e >= cfg.batch) break;
        std::uint64_t base = derive_seed(cfg.seed, iter * 1000ULL + e);
        EpisodeGrads eg;
        for (int attempt = 0; attempt < 6 && !eg.valid; ++attempt) {
          eg = run_training_episode(cfg, model, params, world_seed,
                                    derive_seed(base, 0xDE0 + attempt),
                                    derive_seed(base, 0xC40 + attempt),
                                    derive_seed(base, 0x501 + attempt));
          if (!std::isfinite(eg.loss)) break;  // keep NaN visible to the caller
        }
        slots[e] = std::move(eg);
      }
    };
    if (workers <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }

    ParamMap grads;
    double loss_sum = 0.0;
    int n_valid = 0;
    bool nan_seen = false;
    for (const auto& eg : slots) {
      if (!eg.valid) {
        if (!std::isfinite(eg.loss)) nan_seen = true;
        continue;
      }
      ++n_valid;
      loss_sum += eg.loss;
      for (const auto& [name, g] : eg.grads) {
        auto [it, fresh] = grads.try_emplace(name, g);
        if (!fresh)
          for (int k = 0; k < g.size(); ++k) it->second.data[k] += g.data[k];
      }
    }
    if (nan_seen) {
      log_info("non-finite loss at iteration " + std::to_string(iter) + ", aborting");
      result.aborted = true;
      break;
    }
    if (n_valid == 0) continue;
    for (auto& [name, g] : grads) {
      if (!g.all_finite()) {
        nan_seen = true;
        break;
      }
      for (auto& x : g.data) x /= static_cast<Real>(n_valid);
    }
    if (nan_seen) {
      log_info("non-finite gradient at iteration " + std::to_string(iter) + ", aborting");
      result.aborted = true;
      break;
    }
    adam_step(params, grads, adam);
    result.params = params;
    result.last_loss = loss_sum / n_valid;

    bool do_val = cfg.val_every > 0 && (iter + 1) % cfg.val_every == 0;
    if (do_val) {
      EvalOutcome val = evaluate(val_cfg, params, cfg.val_trials,
                                 derive_seed(cfg.seed, 0x7A1000ULL + iter), workers);
      result.last_val_success = val.report.success;
    }
    char row[96];
    std::snprintf(row, sizeof(row), "%ld,%.6f,%s\n", iter + 1, result.last_loss,
                  do_val ? std::to_string(result.last_val_success).c_str() : "");
    metrics_csv += row;
    if (callback) callback(iter + 1, result.last_loss, do_val ? result.last_val_success : -1.0);
    if (do_val || (iter + 1) % 100 == 0)
      log_info("iter " + std::to_string(iter + 1) + " loss " + std::to_string(result.last_loss) +
               (do_val ? " val_success " + std::to_string(result.last_val_success) : ""));

    if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(out_dir + "/ckpt_" + std::to_string(iter + 1), params,
                      {{"iteration", iter + 1}, {"config_hash", cfg.hash()}});
      flush_metrics();
    }
  }

  result.final_checkpoint = out_dir + "/ckpt_final";
  save_checkpoint(result.final_checkpoint, result.params,
                  {{"iteration", cfg.iterations}, {"config_hash", cfg.hash()},
                   {"aborted", result.aborted}});
  flush_metrics();
  return result;
}

}  // namespace rpf
