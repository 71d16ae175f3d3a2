// Command-line entry point: world/demo generation, training, evaluation,
// generalization sweeps, top-view rendering, and gradient checking.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rpf/train.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::int64_t seed = -1;
  int workers = 0;
};

void add_common(CLI::App* app, CommonOpts& o) {
  app->add_option("--config", o.config_path, "run configuration file (key = value lines)");
  app->add_option("--set", o.sets, "override a config key, e.g. --set noise=0.3")
      ->type_name("KEY=VALUE");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--seed", o.seed, "root seed override");
  app->add_option("--workers", o.workers, "worker thread count");
}

rpf::RunConfig build_config(const CommonOpts& o) {
  rpf::RunConfig cfg;
  if (!o.config_path.empty()) cfg = rpf::RunConfig::load(o.config_path);
  for (const auto& kv : o.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw rpf::ConfigError("--set expects KEY=VALUE: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  if (o.workers > 0) cfg.workers = o.workers;
  if (!o.out.empty()) cfg.out = o.out;
  cfg.validate();
  return cfg;
}

void write_manifest(const rpf::RunConfig& cfg, const std::string& command) {
  std::filesystem::create_directories(cfg.out);
  nlohmann::json m{{"command", command},
                   {"config_hash", cfg.hash()},
                   {"seed", cfg.seed},
                   {"workers", cfg.workers},
                   {"version", kVersion}};
  std::ofstream f(cfg.out + "/run_manifest.json");
  f << m.dump(2) << "\n";
  cfg.save(cfg.out + "/config.txt");
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f.good()) throw rpf::ContractError("cannot write " + path);
  f << body;
}

rpf::ParamMap load_or_init(const std::string& ckpt, const rpf::RunConfig& cfg) {
  if (!ckpt.empty()) return rpf::load_checkpoint(ckpt);
  return rpf::init_params(cfg.model(), cfg.seed);
}

void print_report(const rpf::MetricsReport& r) {
  std::printf("trials            %d\n", r.n_trials);
  std::printf("success_rate      %.4f  [%.4f, %.4f]\n", r.success, r.success_lo, r.success_hi);
  std::printf("spl               %.4f  [%.4f, %.4f]\n", r.spl, r.spl_lo, r.spl_hi);
  std::printf("median_norm_dist  %.4f  [%.4f, %.4f]\n", r.median_nd, r.median_nd_lo,
              r.median_nd_hi);
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  if (out.empty()) throw rpf::ConfigError("--values expects a comma-separated list");
  return out;
}

int cmd_gen(const rpf::RunConfig& cfg) {
  write_manifest(cfg, "gen");
  rpf::World w = rpf::generate_world(cfg.seed, cfg.world);
  std::string path = cfg.out + "/world_" + std::to_string(cfg.seed) + ".json";
  w.save(path);
  std::printf("wrote %s (%dx%d, %zu objects)\n", path.c_str(), w.width(), w.height(),
              w.objects().size());
  return 0;
}

int cmd_demo(const rpf::RunConfig& cfg) {
  write_manifest(cfg, "demo");
  rpf::TrialSetup setup =
      rpf::make_trial_setup(cfg, cfg.train_lo + cfg.seed % (cfg.train_hi - cfg.train_lo),
                            rpf::derive_seed(cfg.seed, 0xDE0), rpf::derive_seed(cfg.seed, 0xC40));
  if (!setup.valid) {
    std::fprintf(stderr, "error: demonstration sampling failed for seed %llu\n",
                 static_cast<unsigned long long>(cfg.seed));
    return 1;
  }
  std::string wp = cfg.out + "/world.json";
  std::string dp = cfg.out + "/demo.jsonl";
  setup.demo_world.save(wp);
  rpf::save_demonstration(setup.demo, dp);
  std::printf("wrote %s and %s (%d steps)\n", wp.c_str(), dp.c_str(), setup.demo.size());
  return 0;
}

int cmd_train(const rpf::RunConfig& cfg) {
  write_manifest(cfg, "train");
  rpf::TrainResult r = rpf::train(cfg, cfg.out, cfg.workers);
  std::printf("final checkpoint: %s\n", r.final_checkpoint.c_str());
  std::printf("last loss: %.6f  last val success: %.4f\n", r.last_loss, r.last_val_success);
  if (r.aborted) {
    std::fprintf(stderr, "error: training aborted on non-finite loss or gradient\n");
    return 1;
  }
  return 0;
}

int cmd_eval(const rpf::RunConfig& cfg, const std::string& ckpt, int trials) {
  write_manifest(cfg, "eval");
  rpf::ParamMap params = load_or_init(ckpt, cfg);
  rpf::EvalOutcome out = rpf::evaluate(cfg, params, trials, cfg.seed, cfg.workers);
  print_report(out.report);
  std::vector<rpf::SweepPoint> one{{cfg.noise, out.report, out.errors}};
  write_file(cfg.out + "/eval.csv", rpf::sweep_csv(one));
  if (out.errors > 0) {
    std::fprintf(stderr, "error: %d trials failed to generate\n", out.errors);
    return 1;
  }
  return 0;
}

int cmd_sweep(const rpf::RunConfig& cfg, const std::string& ckpt, const std::string& axis_name,
              const std::string& values_csv, int trials) {
  write_manifest(cfg, "sweep");
  rpf::SweepAxis axis = rpf::parse_sweep_axis(axis_name);
  std::vector<double> values = parse_values(values_csv);
  rpf::ParamMap params = load_or_init(ckpt, cfg);
  auto points = rpf::sweep(cfg, params, axis, values, trials, cfg.seed, cfg.workers);
  std::string base = cfg.out + "/sweep_" + axis_name;
  write_file(base + ".csv", rpf::sweep_csv(points));
  write_file(base + ".svg", rpf::sweep_plot_svg(points, axis_name + " sweep"));
  std::printf("wrote %s.csv and %s.svg\n", base.c_str(), base.c_str());
  int errors = 0;
  for (const auto& p : points) errors += p.errors;
  if (errors > 0) {
    std::fprintf(stderr, "error: %d trials failed to generate\n", errors);
    return 1;
  }
  return 0;
}

int cmd_render(const rpf::RunConfig& cfg, const std::string& ckpt) {
  write_manifest(cfg, "render");
  std::uint64_t range = cfg.test_hi - cfg.test_lo;
  rpf::TrialSetup setup =
      rpf::make_trial_setup(cfg, cfg.test_lo + cfg.seed % range,
                            rpf::derive_seed(cfg.seed, 0xDE0), rpf::derive_seed(cfg.seed, 0xC40));
  if (!setup.valid) {
    std::fprintf(stderr, "error: trial generation failed for seed %llu\n",
                 static_cast<unsigned long long>(cfg.seed));
    return 1;
  }
  rpf::NoiseSpec noise;
  noise.level = cfg.noise;
  auto rollout = [&](rpf::Agent& agent, std::uint64_t stream) {
    rpf::Rng rng = rpf::make_rng(cfg.seed, stream);
    std::vector<rpf::Pose> poses{setup.start};
    rpf::Pose pose = setup.start;
    agent.reset(setup.memory);
    for (int t = 0; t < cfg.horizon; ++t) {
      rpf::Action a = agent.act(rpf::render(setup.exec_world, pose));
      pose = rpf::step(setup.exec_world, pose, a, noise, rng).pose;
      poses.push_back(pose);
    }
    return poses;
  };
  std::vector<rpf::TrajectoryTrace> traces;
  rpf::ModelConfig open_cfg = cfg.model();
  open_cfg.kind = rpf::PolicyKind::OpenLoop;
  auto open_agent = rpf::make_agent(open_cfg, {});
  traces.push_back({"open_loop", rollout(*open_agent, 0x01)});
  if (!ckpt.empty()) {
    rpf::ParamMap params = rpf::load_checkpoint(ckpt);
    auto agent = rpf::make_agent(cfg.model(), params);
    traces.push_back({rpf::policy_kind_name(cfg.kind), rollout(*agent, 0x02)});
  }
  std::string path = cfg.out + "/topview.svg";
  write_file(path, rpf::render_topview(setup.exec_world, setup.reference, traces));
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_gradcheck(const rpf::RunConfig& cfg) {
  // Canonical full-pipeline problem with an adaptive-step 4th-order stencil
  // over the largest-gradient entries. In the default 32-bit build the loss
  // is conditioned with a linear probe over the checked entries so the float
  // finite-difference quotient stays above the round-off floor.
  rpf::GradCheckProblem pr = rpf::make_gradcheck_problem(cfg.seed);
  rpf::LossBuilder fn = rpf::episode_loss_builder(pr.model, pr.memory, pr.obs, pr.labels);
  double tol = sizeof(rpf::Real) == 8 ? 1e-7 : 1e-3;
  rpf::LossBuilder checked = fn;
  if (sizeof(rpf::Real) != 8)
    checked = rpf::with_linear_probe(fn, rpf::top_grad_entries(fn, pr.params, 8), pr.params);
  double worst = 0.0;
  for (const auto& e : rpf::grad_check(checked, pr.params, 8, 17, 0.0, 4, true)) {
    std::printf("%-16s checked=%-3d max_rel_err=%.3e\n", e.name.c_str(), e.checked,
                e.max_rel_err);
    worst = std::max(worst, e.max_rel_err);
  }
  std::printf("worst %.3e (tolerance %.0e)\n", worst, tol);
  return worst < tol ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic navigation simulator and attention-pointer controller"};
  app.require_subcommand(1);

  CommonOpts gen_o, demo_o, train_o, eval_o, sweep_o, render_o, grad_o;
  std::string eval_ckpt, sweep_ckpt, render_ckpt, sweep_axis, sweep_values;
  int eval_trials = 500, sweep_trials = 500;

  auto* gen = app.add_subcommand("gen", "generate a world and write it as JSON");
  add_common(gen, gen_o);
  auto* demo = app.add_subcommand("demo", "sample a reference trajectory in a generated world");
  add_common(demo, demo_o);
  auto* train = app.add_subcommand("train", "run imitation training");
  add_common(train, train_o);
  auto* eval = app.add_subcommand("eval", "evaluate a policy on held-out trials");
  add_common(eval, eval_o);
  eval->add_option("--ckpt", eval_ckpt, "checkpoint directory (default: fresh init)");
  eval->add_option("--trials", eval_trials, "number of trials");
  auto* sweep = app.add_subcommand("sweep", "evaluate across an axis of conditions");
  add_common(sweep, sweep_o);
  sweep->add_option("--ckpt", sweep_ckpt, "checkpoint directory (default: fresh init)");
  sweep->add_option("--axis", sweep_axis, "noise | clearance | length | change")->required();
  sweep->add_option("--values", sweep_values, "comma-separated axis values")->required();
  sweep->add_option("--trials", sweep_trials, "trials per axis value");
  auto* render = app.add_subcommand("render", "write a top-view SVG of one trial");
  add_common(render, render_o);
  render->add_option("--ckpt", render_ckpt, "checkpoint directory for the learned policy");
  auto* grad = app.add_subcommand("gradcheck", "pointer to the gradient-check tests");
  add_common(grad, grad_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(build_config(gen_o));
    if (demo->parsed()) return cmd_demo(build_config(demo_o));
    if (train->parsed()) return cmd_train(build_config(train_o));
    if (eval->parsed()) return cmd_eval(build_config(eval_o), eval_ckpt, eval_trials);
    if (sweep->parsed())
      return cmd_sweep(build_config(sweep_o), sweep_ckpt, sweep_axis, sweep_values, sweep_trials);
    if (render->parsed()) return cmd_render(build_config(render_o), render_ckpt);
    if (grad->parsed()) return cmd_gradcheck(build_config(grad_o));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
