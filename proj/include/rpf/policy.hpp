#pragma once

// The path-following controller: feature encoder phi, path memory with
// soft-attention reads along a learned pointer, recurrent head, feature
// synthesis for homing, and the baseline/ablation policies behind one
// agent interface.

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rpf/common.hpp"
#include "rpf/envgen.hpp"
#include "rpf/grad.hpp"
#include "rpf/sim.hpp"

namespace rpf {

enum class PolicyKind {
  OpenLoop,
  Rpf,
  RpfNoVisualMemory,
  RpfConstantIncrement,
  RpfNoRecurrence,
  GruNoMemory,
  NearestNeighbor,
};

inline const char* policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::OpenLoop: return "open_loop";
    case PolicyKind::Rpf: return "rpf";
    case PolicyKind::RpfNoVisualMemory: return "rpf_no_visual_memory";
    case PolicyKind::RpfConstantIncrement: return "rpf_constant_increment";
    case PolicyKind::RpfNoRecurrence: return "rpf_no_recurrence";
    case PolicyKind::GruNoMemory: return "gru_no_memory";
    case PolicyKind::NearestNeighbor: return "nearest_neighbor";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(const std::string& s) {
  for (PolicyKind k : {PolicyKind::OpenLoop, PolicyKind::Rpf, PolicyKind::RpfNoVisualMemory,
                       PolicyKind::RpfConstantIncrement, PolicyKind::RpfNoRecurrence,
                       PolicyKind::GruNoMemory, PolicyKind::NearestNeighbor})
    if (s == policy_kind_name(k)) return k;
  throw ConfigError("unknown policy kind: " + s);
}

enum class Task { Following, Homing };

inline const char* task_name(Task t) { return t == Task::Following ? "following" : "homing"; }

inline Task parse_task(const std::string& s) {
  if (s == "following") return Task::Following;
  if (s == "homing") return Task::Homing;
  throw ConfigError("unknown task: " + s);
}

struct ModelConfig {
  PolicyKind kind = PolicyKind::Rpf;
  Task task = Task::Following;
  int feat = 64;        // encoder.width
  int hidden = 128;     // gru.hidden
  double attention_span = 1e9;  // attention.span; entries beyond it are skipped

  bool uses_network() const { return kind != PolicyKind::OpenLoop; }
  bool uses_memory() const {
    return kind == PolicyKind::Rpf || kind == PolicyKind::RpfNoVisualMemory ||
           kind == PolicyKind::RpfConstantIncrement || kind == PolicyKind::RpfNoRecurrence;
  }
  bool memory_visual() const {
    return uses_memory() && kind != PolicyKind::RpfNoVisualMemory;
  }
  bool recurrent() const {
    return kind == PolicyKind::Rpf || kind == PolicyKind::RpfNoVisualMemory ||
           kind == PolicyKind::RpfConstantIncrement || kind == PolicyKind::GruNoMemory;
  }
  bool learned_increment() const {
    return uses_memory() && kind != PolicyKind::RpfConstantIncrement;
  }
  bool synthesize() const { return task == Task::Homing && memory_visual(); }
};

// Encoder geometry: 32x5 scan -> conv(16,k5,s2) -> conv(32,k5,s2) -> dense.
constexpr int kConv1Out = 16, kConv2Out = 32, kConvKernel = 5, kConvStride = 2;
inline int conv1_len() { return (kNumRays - kConvKernel) / kConvStride + 1; }
inline int conv2_len() { return (conv1_len() - kConvKernel) / kConvStride + 1; }
inline int phi_flat_dim() { return kConv2Out * conv2_len(); }

// Parameter tensors for a policy kind, initialized uniform(+-sqrt(1/fan_in)),
// biases zero. Creation order is fixed so a given seed always produces the
// same values.
inline ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamMap params;
  Rng rng = make_rng(seed, 0x9A);
  auto weight = [&](const std::string& name, int rows, int cols) {
    Tensor t = Tensor::zeros({rows, cols});
    double s = std::sqrt(1.0 / cols);
    std::uniform_real_distribution<double> u(-s, s);
    for (auto& v : t.data) v = static_cast<Real>(u(rng));
    params[name] = std::move(t);
  };
  auto bias = [&](const std::string& name, int n) { params[name] = Tensor::zeros({n}); };

  if (!cfg.uses_network()) return params;

  weight("phi.conv1.w", kConv1Out, kRayChannels * kConvKernel);
  bias("phi.conv1.b", kConv1Out);
  weight("phi.conv2.w", kConv2Out, kConv1Out * kConvKernel);
  bias("phi.conv2.b", kConv2Out);
  weight("phi.fc.w", cfg.feat, phi_flat_dim());
  bias("phi.fc.b", cfg.feat);

  if (cfg.kind == PolicyKind::NearestNeighbor) return params;

  if (cfg.uses_memory()) {
    weight("psi.fc1.w", cfg.feat, 8 + cfg.feat);
    bias("psi.fc1.b", cfg.feat);
    weight("psi.fc2.w", cfg.feat, cfg.feat);
    bias("psi.fc2.b", cfg.feat);
  }
  int xdim = cfg.uses_memory() ? 2 * cfg.feat : cfg.feat;
  if (cfg.recurrent()) {
    for (const char* g : {"z", "r", "h"}) {
      weight(std::string("gru.w") + g, cfg.hidden, cfg.hidden + xdim);
      bias(std::string("gru.b") + g, cfg.hidden);
    }
  } else {
    weight("ff.w", cfg.hidden, xdim);
    bias("ff.b", cfg.hidden);
  }
  weight("head.action.w", kNumActions, cfg.hidden);
  bias("head.action.b", kNumActions);
  if (cfg.learned_increment()) {
    weight("head.inc.w", 1, cfg.hidden);
    bias("head.inc.b", 1);
  }
  if (cfg.synthesize()) {
    weight("omega.fc1.w", cfg.feat, cfg.feat + 4);
    bias("omega.fc1.b", cfg.feat);
    weight("omega.fc2.w", cfg.feat + 1, cfg.feat);
    bias("omega.fc2.b", cfg.feat + 1);
  }
  return params;
}

// (dx, dy, sin dtheta, cos dtheta) of pose `to` expressed in the frame of
// pose `from`.
inline std::array<Real, 4> pose_delta(const Pose& from, const Pose& to) {
  double dxw = to.x - from.x, dyw = to.y - from.y;
  double rad = deg2rad(from.theta);
  double c = std::cos(rad), s = std::sin(rad);
  double dth = deg2rad(to.theta - from.theta);
  return {static_cast<Real>(c * dxw + s * dyw), static_cast<Real>(-s * dxw + c * dyw),
          static_cast<Real>(std::sin(dth)), static_cast<Real>(std::cos(dth))};
}

// Path memory as plain data; features become graph nodes per episode so the
// whole pipeline stays differentiable end-to-end.
struct MemorySpec {
  int J = 0;
  std::vector<std::array<Real, 4>> action_onehot;
  std::vector<std::array<Real, 4>> step_delta;
  bool use_visual = true;
  bool synthesize = false;
  std::vector<Observation> entry_obs;   // per-entry features when !synthesize
  std::vector<Observation> source_obs;  // synthesis sources
  std::vector<std::vector<std::array<Real, 4>>> rel_pose;  // [entry][source]
};

// Builds the memory for a task direction. `demo` is the reference for the
// direction actually executed (already reversed for homing); `synth_source`
// supplies the forward-pass observations features are synthesized from.
inline MemorySpec build_memory(const Demonstration& demo, bool use_visual, bool synthesize,
                               const Demonstration* synth_source = nullptr) {
  check(demo.size() >= 1, "build_memory: empty demonstration");
  MemorySpec mem;
  mem.J = demo.size();
  mem.use_visual = use_visual;
  mem.synthesize = use_visual && synthesize;
  for (int j = 0; j < mem.J; ++j) {
    std::array<Real, 4> onehot{};
    onehot[static_cast<int>(demo.actions[j])] = Real(1);
    mem.action_onehot.push_back(onehot);
    if (j + 1 < mem.J)
      mem.step_delta.push_back(pose_delta(demo.poses[j], demo.poses[j + 1]));
    else
      mem.step_delta.push_back({0, 0, 0, 1});
  }
  if (mem.synthesize) {
    check(synth_source != nullptr, "build_memory: synthesis requires source demo");
    mem.source_obs = synth_source->observations;
    mem.rel_pose.resize(mem.J);
    for (int j = 0; j < mem.J; ++j) {
      mem.rel_pose[j].reserve(synth_source->size());
      for (int i = 0; i < synth_source->size(); ++i)
        mem.rel_pose[j].push_back(pose_delta(synth_source->poses[i], demo.poses[j]));
    }
  } else if (use_visual) {
    mem.entry_obs = demo.observations;
  }
  return mem;
}

// ---------------------------------------------------------------------------
// Graph builders

namespace graph {

inline Tape::Id obs_leaf(Tape& t, const Observation& obs) {
  // channels-first [5 x 32]
  Tensor x = Tensor::zeros({kRayChannels, kNumRays});
  auto flat = obs.flat();
  for (int r = 0; r < kNumRays; ++r)
    for (int c = 0; c < kRayChannels; ++c)
      x.at(c, r) = static_cast<Real>(flat[r * kRayChannels + c]);
  return t.leaf(std::move(x));
}

inline Tape::Id phi(Tape& t, const std::map<std::string, Tape::Id>& p, Tape::Id obs) {
  Tape::Id c1 = t.relu_(t.conv1d(obs, p.at("phi.conv1.w"), p.at("phi.conv1.b"),
                                 kConvKernel, kConvStride));
  Tape::Id c2 = t.relu_(t.conv1d(c1, p.at("phi.conv2.w"), p.at("phi.conv2.b"),
                                 kConvKernel, kConvStride));
  Tape::Id flat = t.reshape(c2, {phi_flat_dim()});
  return t.add(t.matmul(p.at("phi.fc.w"), flat), p.at("phi.fc.b"));
}

inline Tape::Id psi(Tape& t, const std::map<std::string, Tape::Id>& p, Tape::Id entry) {
  Tape::Id h = t.relu_(t.add(t.matmul(p.at("psi.fc1.w"), entry), p.at("psi.fc1.b")));
  return t.add(t.matmul(p.at("psi.fc2.w"), h), p.at("psi.fc2.b"));
}

// Unnormalized attention weight e^{-|eta - j|} for 1-based index j.
inline Tape::Id attention_weight(Tape& t, Tape::Id eta, int j) {
  return t.exp_(t.neg(t.abs_(t.sub(eta, t.scalar(static_cast<Real>(j))))));
}

// mu = sum_j psi_j * e^{-|eta - j|}; entries farther than `span` from the
// current pointer value are skipped (their weight is below e^{-span}).
inline Tape::Id attend(Tape& t, const std::vector<Tape::Id>& psi_entries, Tape::Id eta,
                       double span = 1e9) {
  double eta_val = static_cast<double>(t.value(eta).data[0]);
  std::vector<Tape::Id> items, weights;
  for (int j = 1; j <= static_cast<int>(psi_entries.size()); ++j) {
    if (std::abs(eta_val - j) > span) continue;
    items.push_back(psi_entries[j - 1]);
    weights.push_back(attention_weight(t, eta, j));
  }
  if (items.empty()) {  // pointer ran far past the memory; keep the last entry
    items.push_back(psi_entries.back());
    weights.push_back(attention_weight(t, eta, static_cast<int>(psi_entries.size())));
  }
  return t.weighted_sum(items, weights);
}

// Synthesized feature for one target: omega contributions from every source
// feature + relative pose, combined by a softmax-weighted sum.
inline Tape::Id synthesize_feature(Tape& t, const std::map<std::string, Tape::Id>& p,
                                   const std::vector<Tape::Id>& source_feats,
                                   const std::vector<std::array<Real, 4>>& rel_pose, int feat) {
  const int n = static_cast<int>(source_feats.size());
  std::vector<Tape::Id> contribs, logits;
  for (int i = 0; i < n; ++i) {
    Tape::Id delta = t.leaf(Tensor::from({4}, {rel_pose[i][0], rel_pose[i][1],
                                               rel_pose[i][2], rel_pose[i][3]}));
    Tape::Id in = t.concat({source_feats[i], delta});
    Tape::Id h = t.relu_(t.add(t.matmul(p.at("omega.fc1.w"), in), p.at("omega.fc1.b")));
    Tape::Id out = t.add(t.matmul(p.at("omega.fc2.w"), h), p.at("omega.fc2.b"));
    contribs.push_back(t.slice(out, 0, feat));
    logits.push_back(t.slice(out, feat, 1));
  }
  Tape::Id w = t.softmax(t.concat(logits));
  std::vector<Tape::Id> weights;
  for (int i = 0; i < n; ++i) weights.push_back(t.slice(w, i, 1));
  return t.weighted_sum(contribs, weights);
}

}  // namespace graph

// One episode of the controller as a growing rollout graph. Training calls
// backward on a loss over the emitted logits; evaluation just reads them.
class RpfEpisode {
 public:
  RpfEpisode(const ModelConfig& cfg, const ParamMap& params, const MemorySpec& mem)
      : cfg_(cfg), owned_(std::make_unique<Tape>()), tape_(*owned_) {
    for (const auto& [name, v] : params) pids_[name] = tape_.leaf(v);
    init(mem);
  }

  // Builds on an existing tape with caller-owned parameter leaves, so an
  // outer graph (for example a gradient check) can read their gradients.
  RpfEpisode(const ModelConfig& cfg, Tape& tape, std::map<std::string, Tape::Id> pids,
             const MemorySpec& mem)
      : cfg_(cfg), tape_(tape), pids_(std::move(pids)) {
    init(mem);
  }

  // Emits action logits for the current observation and advances (h, eta).
  Tape::Id step_logits(const Observation& obs) {
    Tape::Id obs_feat = graph::phi(tape_, pids_, graph::obs_leaf(tape_, obs));
    Tape::Id input = obs_feat;
    if (cfg_.uses_memory()) {
      Tape::Id mu = graph::attend(tape_, psi_entries_, eta_, cfg_.attention_span);
      input = tape_.concat({mu, obs_feat});
    }
    Tape::Id hidden;
    if (cfg_.recurrent()) {
      GruParamIds g{pids_.at("gru.wz"), pids_.at("gru.bz"), pids_.at("gru.wr"),
                    pids_.at("gru.br"), pids_.at("gru.wh"), pids_.at("gru.bh")};
      h_ = gru_cell(tape_, h_, input, g);
      hidden = h_;
    } else {
      hidden = tape_.relu_(tape_.add(tape_.matmul(pids_.at("ff.w"), input), pids_.at("ff.b")));
    }
    Tape::Id logits = tape_.add(tape_.matmul(pids_.at("head.action.w"), hidden),
                                pids_.at("head.action.b"));
    if (cfg_.uses_memory()) {
      Tape::Id inc;
      if (cfg_.learned_increment()) {
        Tape::Id b = tape_.add(tape_.matmul(pids_.at("head.inc.w"), hidden),
                               pids_.at("head.inc.b"));
        last_increment_raw_ = static_cast<double>(tape_.value(b).data[0]);
        inc = tape_.add(tape_.scalar(Real(1)), tape_.tanh_(b));
      } else {
        inc = tape_.scalar(Real(1));
      }
      eta_ = tape_.add(eta_, inc);
      eta_history_.push_back(eta());
    }
    return logits;
  }

  Tape& tape() { return tape_; }
  const std::map<std::string, Tape::Id>& param_ids() const { return pids_; }
  double eta() const { return static_cast<double>(tape_.value(eta_).data[0]); }
  const std::vector<double>& eta_history() const { return eta_history_; }
  double last_increment_raw() const { return last_increment_raw_; }

 private:
  void init(const MemorySpec& mem) {
    if (cfg_.uses_memory()) build_memory_nodes(mem);
    if (cfg_.recurrent()) h_ = tape_.leaf(Tensor::zeros({cfg_.hidden}));
    eta_ = tape_.scalar(Real(1));
    eta_history_.push_back(1.0);
  }

  void build_memory_nodes(const MemorySpec& mem) {
    std::vector<Tape::Id> features;
    if (mem.synthesize) {
      std::vector<Tape::Id> src_feats;
      for (const auto& obs : mem.source_obs)
        src_feats.push_back(graph::phi(tape_, pids_, graph::obs_leaf(tape_, obs)));
      for (int j = 0; j < mem.J; ++j)
        features.push_back(graph::synthesize_feature(tape_, pids_, src_feats,
                                                     mem.rel_pose[j], cfg_.feat));
    } else if (mem.use_visual) {
      for (const auto& obs : mem.entry_obs)
        features.push_back(graph::phi(tape_, pids_, graph::obs_leaf(tape_, obs)));
    } else {
      for (int j = 0; j < mem.J; ++j)
        features.push_back(tape_.leaf(Tensor::zeros({cfg_.feat})));
    }
    for (int j = 0; j < mem.J; ++j) {
      Tensor ap = Tensor::zeros({8});
      for (int k = 0; k < 4; ++k) {
        ap.data[k] = mem.action_onehot[j][k];
        ap.data[4 + k] = mem.step_delta[j][k];
      }
      Tape::Id entry = tape_.concat({tape_.leaf(std::move(ap)), features[j]});
      psi_entries_.push_back(graph::psi(tape_, pids_, entry));
    }
  }

  ModelConfig cfg_;
  std::unique_ptr<Tape> owned_;
  Tape& tape_;
  std::map<std::string, Tape::Id> pids_;
  std::vector<Tape::Id> psi_entries_;
  Tape::Id h_ = -1;
  Tape::Id eta_ = -1;
  std::vector<double> eta_history_;
  double last_increment_raw_ = 0.0;
};

// Trained-nearest-neighbor baseline: cosine similarity between phi(O) and
// the memory features; softmaxed similarities vote with their stored
// actions. Greedy evaluation takes the best-matching entry's action.
class NearestNeighborEpisode {
 public:
  static constexpr double kTemperature = 0.1;

  NearestNeighborEpisode(const ModelConfig& cfg, const ParamMap& params, const MemorySpec& mem)
      : mem_(&mem) {
    (void)cfg;
    for (const auto& [name, v] : params) pids_[name] = tape_.leaf(v);
    check(!mem.entry_obs.empty(), "nearest-neighbor memory needs reference observations");
    for (const auto& obs : mem.entry_obs)
      ref_feats_.push_back(graph::phi(tape_, pids_, graph::obs_leaf(tape_, obs)));
  }

  // Action-probability vector (sums to 1); differentiable.
  Tape::Id step_probs(const Observation& obs) {
    Tape::Id f = graph::phi(tape_, pids_, graph::obs_leaf(tape_, obs));
    std::vector<Tape::Id> sims;
    for (Tape::Id r : ref_feats_) sims.push_back(cosine(f, r));
    Tape::Id w = tape_.softmax(tape_.scale(tape_.concat(sims), Real(1.0 / kTemperature)));
    last_sims_.clear();
    for (Tape::Id s : sims) last_sims_.push_back(static_cast<double>(tape_.value(s).data[0]));
    std::vector<Tape::Id> onehots, weights;
    for (int j = 0; j < static_cast<int>(ref_feats_.size()); ++j) {
      Tensor oh = Tensor::zeros({kNumActions});
      oh.data[static_cast<int>(mem_->action_onehot[j][0] > 0   ? 0
                               : mem_->action_onehot[j][1] > 0 ? 1
                               : mem_->action_onehot[j][2] > 0 ? 2
                                                               : 3)] = Real(1);
      onehots.push_back(tape_.leaf(std::move(oh)));
      weights.push_back(tape_.slice(w, j, 1));
    }
    return tape_.weighted_sum(onehots, weights);
  }

  // Greedy vote: stored action of the most similar entry.
  Action greedy_action() const {
    int best = 0;
    for (int j = 1; j < static_cast<int>(last_sims_.size()); ++j)
      if (last_sims_[j] > last_sims_[best]) best = j;
    for (int a = 0; a < kNumActions; ++a)
      if (mem_->action_onehot[best][a] > 0) return static_cast<Action>(a);
    return Action::Stay;
  }

  Tape& tape() { return tape_; }
  const std::map<std::string, Tape::Id>& param_ids() const { return pids_; }

 private:
  Tape::Id cosine(Tape::Id a, Tape::Id b) {
    Tape::Id dot = tape_.sum(tape_.mul(a, b));
    Tape::Id na = tape_.sqrt_(tape_.add(tape_.sum(tape_.mul(a, a)), tape_.scalar(Real(1e-8))));
    Tape::Id nb = tape_.sqrt_(tape_.add(tape_.sum(tape_.mul(b, b)), tape_.scalar(Real(1e-8))));
    return tape_.divide(dot, tape_.mul(na, nb));
  }

  Tape tape_;
  std::map<std::string, Tape::Id> pids_;
  std::vector<Tape::Id> ref_feats_;
  const MemorySpec* mem_;
  std::vector<double> last_sims_;
};

// ---------------------------------------------------------------------------
// Unified evaluation-time agent. Inputs are exactly {memory, observation,
// own state}; the harness never passes ground-truth pose here.

class Agent {
 public:
  virtual ~Agent() = default;
  virtual void reset(const MemorySpec& mem) = 0;
  virtual Action act(const Observation& obs) = 0;
};

class OpenLoopAgent final : public Agent {
 public:
  void reset(const MemorySpec& mem) override {
    mem_ = &mem;
    t_ = 0;
  }
  Action act(const Observation&) override {
    int j = std::min(t_++, mem_->J - 1);
    for (int a = 0; a < kNumActions; ++a)
      if (mem_->action_onehot[j][a] > 0) return static_cast<Action>(a);
    return Action::Stay;
  }

 private:
  const MemorySpec* mem_ = nullptr;
  int t_ = 0;
};

class GraphAgent final : public Agent {
 public:
  GraphAgent(const ModelConfig& cfg, const ParamMap& params) : cfg_(cfg), params_(&params) {}

  void reset(const MemorySpec& mem) override {
    episode_ = std::make_unique<RpfEpisode>(cfg_, *params_, mem);
  }

  Action act(const Observation& obs) override {
    Tape::Id logits = episode_->step_logits(obs);
    const Tensor& v = episode_->tape().value(logits);
    int best = 0;
    for (int a = 1; a < kNumActions; ++a)
      if (v.data[a] > v.data[best]) best = a;
    return static_cast<Action>(best);
  }

  const RpfEpisode* episode() const { return episode_.get(); }

 private:
  ModelConfig cfg_;
  const ParamMap* params_;
  std::unique_ptr<RpfEpisode> episode_;
};

class NearestNeighborAgent final : public Agent {
 public:
  NearestNeighborAgent(const ModelConfig& cfg, const ParamMap& params)
      : cfg_(cfg), params_(&params) {}

  void reset(const MemorySpec& mem) override {
    episode_ = std::make_unique<NearestNeighborEpisode>(cfg_, *params_, mem);
  }

  Action act(const Observation& obs) override {
    episode_->step_probs(obs);
    return episode_->greedy_action();
  }

 private:
  ModelConfig cfg_;
  const ParamMap* params_;
  std::unique_ptr<NearestNeighborEpisode> episode_;
};

inline std::unique_ptr<Agent> make_agent(const ModelConfig& cfg, const ParamMap& params) {
  switch (cfg.kind) {
    case PolicyKind::OpenLoop: return std::make_unique<OpenLoopAgent>();
    case PolicyKind::NearestNeighbor: return std::make_unique<NearestNeighborAgent>(cfg, params);
    default: return std::make_unique<GraphAgent>(cfg, params);
  }
}

}  // namespace rpf
