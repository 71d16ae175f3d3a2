// Gradient reference tool for the canonical full-pipeline check.
//
// Usage: grad_ref <out_dir>
//
// Pins the canonical problem's parameters through float32 storage (so the
// 32-bit and 64-bit builds see bit-identical values), saves the analytic
// gradients, and runs a finite-difference check of the full pipeline
// (observation encoder, memory encoder, attention, controller, loss).
//
// Compiled with RPF_REAL_DOUBLE (the precision oracle) the raw loss is
// checked with an adaptive-step 4th-order stencil against tolerance 1e-7.
// In the default 32-bit build, float FD round-off swamps tiny gradients, so
// the loss is conditioned with a linear probe over the checked entries
// (adding exactly 1 to each checked gradient) and verified against 1e-3; if
// a 64-bit gradient reference is present in <out_dir>/grads64 the analytic
// float gradients are additionally compared against it at 1e-3.

#include <cstdio>
#include <filesystem>
#include <string>

#include "rpf/train.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <out_dir>\n", argv[0]);
    return 2;
  }
  const std::string out = argv[1];
  const bool wide = sizeof(rpf::Real) == 8;
  const double tol = wide ? 1e-7 : 1e-3;

  try {
    rpf::GradCheckProblem pr = rpf::make_gradcheck_problem();
    rpf::save_checkpoint(out + "/params", pr.params);
    pr.params = rpf::load_checkpoint(out + "/params");

    rpf::LossBuilder fn = rpf::episode_loss_builder(pr.model, pr.memory, pr.obs, pr.labels);

    rpf::Tape tape;
    std::map<std::string, rpf::Tape::Id> ids;
    for (const auto& [name, v] : pr.params) ids[name] = tape.leaf(v);
    tape.backward(fn(tape, ids));
    rpf::ParamMap grads;
    for (const auto& [name, id] : ids) grads[name] = tape.grad(id);
    rpf::save_checkpoint(out + (wide ? "/grads64" : "/grads32"), grads);

    rpf::LossBuilder checked = fn;
    if (!wide) {
      auto picks = rpf::top_grad_entries(fn, pr.params, 8);
      checked = rpf::with_linear_probe(fn, picks, pr.params);
    }
    double worst = 0.0;
    for (const auto& e : rpf::grad_check(checked, pr.params, 8, 17, 0.0, 4, true)) {
      std::printf("%-16s checked=%-3d max_rel_err=%.3e l2_rel_err=%.3e\n", e.name.c_str(),
                  e.checked, e.max_rel_err, e.l2_rel_err);
      worst = std::max(worst, e.max_rel_err);
    }
    std::printf("fd worst %.3e (tolerance %.0e, %zu-bit)\n", worst, tol, sizeof(rpf::Real) * 8);
    bool ok = worst < tol;

    if (!wide && std::filesystem::exists(out + "/grads64/manifest.json")) {
      rpf::ParamMap ref = rpf::load_checkpoint(out + "/grads64");
      double xworst = 0.0;
      for (const auto& [name, g] : grads)
        for (std::size_t k = 0; k < g.data.size(); ++k) {
          double r = std::abs(double(g.data[k]) - double(ref.at(name).data[k])) /
                     std::max(std::abs(double(ref.at(name).data[k])), 1e-6);
          xworst = std::max(xworst, r);
        }
      std::printf("vs 64-bit analytic reference: worst %.3e (tolerance 1e-03)\n", xworst);
      ok = ok && xworst < 1e-3;
    }
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
