#pragma once

// Minimal reverse-mode differentiation: a flat tape of tensors with
// backward closures, the primitive set needed by the path-following
// networks, Adam, finite-difference gradient checking, and checkpoints.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "rpf/common.hpp"

namespace rpf {

struct Tensor {
  std::vector<int> shape;
  std::vector<Real> data;

  Tensor() = default;

  static Tensor zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(t.count(), Real(0));
    return t;
  }

  static Tensor full(std::vector<int> s, Real v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(Real v) { return full({1}, v); }

  static Tensor from(std::vector<int> s, std::vector<Real> d) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    check(t.data.size() == t.count(), "tensor data/shape mismatch");
    return t;
  }

  size_t count() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }

  int size() const { return static_cast<int>(data.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Real& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  Real at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t k = 0; k < shape.size(); ++k) s += (k ? "x" : "") + std::to_string(shape[k]);
    return s + "]";
  }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

inline void check_shapes(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
}

class Tape {
 public:
  using Id = int;

  Id leaf(Tensor v) {
    nodes_.push_back({std::move(v), Tensor(), nullptr});
    return static_cast<Id>(nodes_.size()) - 1;
  }

  Id scalar(Real v) { return leaf(Tensor::scalar(v)); }

  const Tensor& value(Id id) const { return nodes_[id].val; }
  const Tensor& grad(Id id) const { return nodes_[id].grad; }

  size_t node_count() const { return nodes_.size(); }

  // -- elementwise -----------------------------------------------------

  Id add(Id a, Id b) {
    check_shapes(value(a), value(b), "add");
    Tensor out = value(a);
    for (int k = 0; k < out.size(); ++k) out.data[k] += value(b).data[k];
    return emit(std::move(out), [a, b](Tape& t, const Tensor& g, const Tensor&) {
      t.accum(a, g);
      t.accum(b, g);
    });
  }

  Id sub(Id a, Id b) {
    check_shapes(value(a), value(b), "sub");
    Tensor out = value(a);
    for (int k = 0; k < out.size(); ++k) out.data[k] -= value(b).data[k];
    return emit(std::move(out), [a, b](Tape& t, const Tensor& g, const Tensor&) {
      t.accum(a, g);
      for (int k = 0; k < g.size(); ++k) t.nodes_[b].grad.data[k] -= g.data[k];
    });
  }

  Id mul(Id a, Id b) {
    check_shapes(value(a), value(b), "mul");
    Tensor out = value(a);
    for (int k = 0; k < out.size(); ++k) out.data[k] *= value(b).data[k];
    return emit(std::move(out), [a, b](Tape& t, const Tensor& g, const Tensor&) {
      const Tensor& va = t.value(a);
      const Tensor& vb = t.value(b);
      for (int k = 0; k < g.size(); ++k) {
        t.nodes_[a].grad.data[k] += g.data[k] * vb.data[k];
        t.nodes_[b].grad.data[k] += g.data[k] * va.data[k];
      }
    });
  }

  Id divide(Id a, Id b) {
    check_shapes(value(a), value(b), "divide");
    Tensor out = value(a);
    for (int k = 0; k < out.size(); ++k) out.data[k] /= value(b).data[k];
    return emit(std::move(out), [a, b](Tape& t, const Tensor& g, const Tensor& y) {
      const Tensor& vb = t.value(b);
      for (int k = 0; k < g.size(); ++k) {
        t.nodes_[a].grad.data[k] += g.data[k] / vb.data[k];
        t.nodes_[b].grad.data[k] -= g.data[k] * y.data[k] / vb.data[k];
      }
    });
  }

  Id scale(Id a, Real c) {
    Tensor out = value(a);
    for (auto& v : out.data) v *= c;
    return emit(std::move(out), [a, c](Tape& t, const Tensor& g, const Tensor&) {
      for (int k = 0; k < g.size(); ++k) t.nodes_[a].grad.data[k] += c * g.data[k];
    });
  }

  Id neg(Id a) { return scale(a, Real(-1)); }

  Id tanh_(Id a) {
    return unary(a, [](Real x) { return std::tanh(x); },
                 [](Real, Real y) { return Real(1) - y * y; });
  }

  Id sigmoid_(Id a) {
    return unary(a, [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
                 [](Real, Real y) { return y * (Real(1) - y); });
  }

  Id relu_(Id a) {
    return unary(a, [](Real x) { return x > 0 ? x : Real(0); },
                 [](Real x, Real) { return x > 0 ? Real(1) : Real(0); });
  }

  Id exp_(Id a) {
    return unary(a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
  }

  // subgradient 0 at the kink
  Id abs_(Id a) {
    return unary(a, [](Real x) { return std::abs(x); },
                 [](Real x, Real) { return x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0)); });
  }

  Id log_(Id a) {
    return unary(a, [](Real x) { return std::log(x); },
                 [](Real x, Real) { return Real(1) / x; });
  }

  Id sqrt_(Id a) {
    return unary(a, [](Real x) { return std::sqrt(x); },
                 [](Real, Real y) { return Real(0.5) / y; });
  }

  // -- reductions / structure -------------------------------------------

  Id sum(Id a) {
    Real s = 0;
    for (Real v : value(a).data) s += v;
    return emit(Tensor::scalar(s), [a](Tape& t, const Tensor& g, const Tensor&) {
      for (auto& gv : t.nodes_[a].grad.data) gv += g.data[0];
    });
  }

  Id softmax(Id a) {
    const Tensor& x = value(a);
    Tensor out = x;
    Real mx = *std::max_element(x.data.begin(), x.data.end());
    Real z = 0;
    for (int k = 0; k < x.size(); ++k) {
      out.data[k] = std::exp(x.data[k] - mx);
      z += out.data[k];
    }
    for (auto& v : out.data) v /= z;
    return emit(std::move(out), [a](Tape& t, const Tensor& g, const Tensor& y) {
      Real dot = 0;
      for (int k = 0; k < g.size(); ++k) dot += g.data[k] * y.data[k];
      for (int k = 0; k < g.size(); ++k)
        t.nodes_[a].grad.data[k] += y.data[k] * (g.data[k] - dot);
    });
  }

  Id concat(const std::vector<Id>& parts) {
    Tensor out;
    int n = 0;
    for (Id p : parts) n += value(p).size();
    out.shape = {n};
    out.data.reserve(n);
    for (Id p : parts)
      out.data.insert(out.data.end(), value(p).data.begin(), value(p).data.end());
    std::vector<Id> ps = parts;
    return emit(std::move(out), [ps](Tape& t, const Tensor& g, const Tensor&) {
      int off = 0;
      for (Id p : ps) {
        Tensor& pg = t.nodes_[p].grad;
        for (int k = 0; k < pg.size(); ++k) pg.data[k] += g.data[off + k];
        off += pg.size();
      }
    });
  }

  Id reshape(Id a, std::vector<int> shape) {
    Tensor out = value(a);
    out.shape = std::move(shape);
    check(out.count() == out.data.size(), "reshape: element count mismatch");
    return emit(std::move(out), [a](Tape& t, const Tensor& g, const Tensor&) {
      Tensor& ga = t.nodes_[a].grad;
      for (int k = 0; k < g.size(); ++k) ga.data[k] += g.data[k];
    });
  }

  Id slice(Id a, int start, int len) {
    const Tensor& x = value(a);
    check(start >= 0 && start + len <= x.size(), "slice out of range");
    Tensor out;
    out.shape = {len};
    out.data.assign(x.data.begin() + start, x.data.begin() + start + len);
    return emit(std::move(out), [a, start, len](Tape& t, const Tensor& g, const Tensor&) {
      for (int k = 0; k < len; ++k) t.nodes_[a].grad.data[start + k] += g.data[k];
    });
  }

  // -- linear algebra ----------------------------------------------------

  // [m x n] * [n] -> [m], or [m x n] * [n x p] -> [m x p]
  Id matmul(Id a, Id b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check(A.shape.size() == 2, "matmul: lhs must be rank 2");
    int m = A.shape[0], n = A.shape[1];
    if (B.shape.size() == 1) {
      check(B.shape[0] == n, "matmul: inner dimension mismatch " + A.shape_str() + " vs " +
                                 B.shape_str());
      Tensor out = Tensor::zeros({m});
      for (int r = 0; r < m; ++r) {
        Real acc = 0;
        const Real* arow = &A.data[static_cast<size_t>(r) * n];
        for (int k = 0; k < n; ++k) acc += arow[k] * B.data[k];
        out.data[r] = acc;
      }
      return emit(std::move(out), [a, b, m, n](Tape& t, const Tensor& g, const Tensor&) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        Tensor& ga = t.nodes_[a].grad;
        Tensor& gb = t.nodes_[b].grad;
        for (int r = 0; r < m; ++r) {
          Real gr = g.data[r];
          Real* garow = &ga.data[static_cast<size_t>(r) * n];
          const Real* arow = &A.data[static_cast<size_t>(r) * n];
          for (int k = 0; k < n; ++k) {
            garow[k] += gr * B.data[k];
            gb.data[k] += gr * arow[k];
          }
        }
      });
    }
    check(B.shape.size() == 2 && B.shape[0] == n, "matmul: inner dimension mismatch " +
                                                      A.shape_str() + " vs " + B.shape_str());
    int p = B.shape[1];
    Tensor out = Tensor::zeros({m, p});
    for (int r = 0; r < m; ++r)
      for (int k = 0; k < n; ++k) {
        Real av = A.at(r, k);
        for (int c = 0; c < p; ++c) out.at(r, c) += av * B.at(k, c);
      }
    return emit(std::move(out), [a, b, m, n, p](Tape& t, const Tensor& g, const Tensor&) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      Tensor& ga = t.nodes_[a].grad;
      Tensor& gb = t.nodes_[b].grad;
      for (int r = 0; r < m; ++r)
        for (int k = 0; k < n; ++k) {
          Real acc = 0;
          for (int c = 0; c < p; ++c) {
            acc += g.at(r, c) * B.at(k, c);
            gb.at(k, c) += A.at(r, k) * g.at(r, c);
          }
          ga.at(r, k) += acc;
        }
    });
  }

  // x [C_in x L], w [C_out x C_in*K], b [C_out] -> [C_out x L_out]
  Id conv1d(Id x, Id w, Id b, int kernel, int stride) {
    const Tensor& X = value(x);
    const Tensor& Wt = value(w);
    check(X.shape.size() == 2, "conv1d: input must be rank 2");
    int cin = X.shape[0], len = X.shape[1];
    int cout = Wt.shape[0];
    check(Wt.shape.size() == 2 && Wt.shape[1] == cin * kernel,
          "conv1d: weight shape mismatch " + Wt.shape_str());
    check(value(b).size() == cout, "conv1d: bias shape mismatch");
    int lout = (len - kernel) / stride + 1;
    check(lout >= 1, "conv1d: input too short");
    Tensor out = Tensor::zeros({cout, lout});
    for (int co = 0; co < cout; ++co)
      for (int t = 0; t < lout; ++t) {
        Real acc = value(b).data[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int k = 0; k < kernel; ++k)
            acc += Wt.at(co, ci * kernel + k) * X.at(ci, t * stride + k);
        out.at(co, t) = acc;
      }
    return emit(std::move(out),
                [x, w, b, kernel, stride, cin, cout, lout](Tape& t, const Tensor& g,
                                                           const Tensor&) {
                  const Tensor& X = t.value(x);
                  const Tensor& Wt = t.value(w);
                  Tensor& gx = t.nodes_[x].grad;
                  Tensor& gw = t.nodes_[w].grad;
                  Tensor& gb = t.nodes_[b].grad;
                  for (int co = 0; co < cout; ++co)
                    for (int o = 0; o < lout; ++o) {
                      Real gv = g.at(co, o);
                      gb.data[co] += gv;
                      for (int ci = 0; ci < cin; ++ci)
                        for (int k = 0; k < kernel; ++k) {
                          gw.at(co, ci * kernel + k) += gv * X.at(ci, o * stride + k);
                          gx.at(ci, o * stride + k) += gv * Wt.at(co, ci * kernel + k);
                        }
                    }
                });
  }

  // sum_j weights[j] * items[j]; items are same-shape vectors, weights scalars.
  Id weighted_sum(const std::vector<Id>& items, const std::vector<Id>& weights) {
    check(!items.empty() && items.size() == weights.size(), "weighted_sum: size mismatch");
    Tensor out = Tensor::zeros(value(items[0]).shape);
    for (size_t j = 0; j < items.size(); ++j) {
      check_shapes(value(items[0]), value(items[j]), "weighted_sum");
      Real wj = value(weights[j]).data[0];
      const Tensor& it = value(items[j]);
      for (int k = 0; k < out.size(); ++k) out.data[k] += wj * it.data[k];
    }
    std::vector<Id> is = items, ws = weights;
    return emit(std::move(out), [is, ws](Tape& t, const Tensor& g, const Tensor&) {
      for (size_t j = 0; j < is.size(); ++j) {
        Real wj = t.value(ws[j]).data[0];
        const Tensor& it = t.value(is[j]);
        Tensor& gi = t.nodes_[is[j]].grad;
        Real dw = 0;
        for (int k = 0; k < g.size(); ++k) {
          gi.data[k] += wj * g.data[k];
          dw += g.data[k] * it.data[k];
        }
        t.nodes_[ws[j]].grad.data[0] += dw;
      }
    });
  }

  // -- backward ----------------------------------------------------------

  // Reverse-creation order is reverse-topological: each node is visited
  // exactly once.
  void backward(Id loss) {
    check(value(loss).size() == 1, "backward: loss must be scalar");
    for (auto& n : nodes_) n.grad = Tensor::zeros(n.val.shape);
    nodes_[loss].grad.data[0] = Real(1);
    for (int k = loss; k >= 0; --k) {
      if (nodes_[k].back) nodes_[k].back(*this, nodes_[k].grad, nodes_[k].val);
    }
  }

 private:
  using BackFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_val)>;

  struct Node {
    Tensor val;
    Tensor grad;
    BackFn back;
  };

  Id emit(Tensor out, BackFn back) {
#ifndef NDEBUG
    assert(out.all_finite() && "non-finite value in forward pass");
#endif
    nodes_.push_back({std::move(out), Tensor(), std::move(back)});
    return static_cast<Id>(nodes_.size()) - 1;
  }

  template <typename F, typename D>
  Id unary(Id a, F fwd, D dfn) {
    Tensor out = value(a);
    for (auto& v : out.data) v = fwd(v);
    return emit(std::move(out), [a, dfn](Tape& t, const Tensor& g, const Tensor& y) {
      const Tensor& x = t.value(a);
      for (int k = 0; k < g.size(); ++k)
        t.nodes_[a].grad.data[k] += g.data[k] * dfn(x.data[k], y.data[k]);
    });
  }

  void accum(Id a, const Tensor& g) {
    Tensor& ga = nodes_[a].grad;
    for (int k = 0; k < g.size(); ++k) ga.data[k] += g.data[k];
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// GRU cell

struct GruParamIds {
  Tape::Id wz, bz, wr, br, wh, bh;
};

// Standard GRU: z/r gates over [h, x], candidate over [r*h, x],
// h' = h + z * (hcand - h).
inline Tape::Id gru_cell(Tape& t, Tape::Id h, Tape::Id x, const GruParamIds& p) {
  Tape::Id hx = t.concat({h, x});
  Tape::Id z = t.sigmoid_(t.add(t.matmul(p.wz, hx), p.bz));
  Tape::Id r = t.sigmoid_(t.add(t.matmul(p.wr, hx), p.br));
  Tape::Id rhx = t.concat({t.mul(r, h), x});
  Tape::Id hc = t.tanh_(t.add(t.matmul(p.wh, rhx), p.bh));
  return t.add(h, t.mul(z, t.sub(hc, h)));
}

// ---------------------------------------------------------------------------
// Adam

using ParamMap = std::map<std::string, Tensor>;

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  ParamMap m, v;
};

inline void adam_step(ParamMap& params, const ParamMap& grads, AdamState& st) {
  ++st.step;
  double bc1 = 1.0 - std::pow(st.beta1, st.step);
  double bc2 = 1.0 - std::pow(st.beta2, st.step);
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    check(g.shape == p.shape, "adam_step: grad shape mismatch for " + name);
    Tensor& m = st.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = st.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (int k = 0; k < p.size(); ++k) {
      double gk = g.data[k];
      double mk = st.beta1 * m.data[k] + (1.0 - st.beta1) * gk;
      double vk = st.beta2 * v.data[k] + (1.0 - st.beta2) * gk * gk;
      m.data[k] = static_cast<Real>(mk);
      v.data[k] = static_cast<Real>(vk);
      double mh = mk / bc1, vh = vk / bc2;
      p.data[k] -= static_cast<Real>(st.lr * mh / (std::sqrt(vh) + st.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;  // per-entry, noisy in float builds
  double l2_rel_err = 0.0;   // ||analytic - fd||2 / ||fd||2 over checked entries
  int checked = 0;
};

// Builds the loss from parameter leaves; must be deterministic.
using LossBuilder = std::function<Tape::Id(Tape&, const std::map<std::string, Tape::Id>&)>;

inline double run_loss(const LossBuilder& fn, const ParamMap& params) {
  Tape t;
  std::map<std::string, Tape::Id> ids;
  for (const auto& [name, v] : params) ids[name] = t.leaf(v);
  return static_cast<double>(t.value(fn(t, ids)).data[0]);
}

// Central differences vs backprop for every parameter tensor; large
// tensors are spot-checked on sampled entries.
// Wraps a loss so that the selected parameter entries each pick up an extra
// gradient contribution of exactly 1 (a linear term sum of the picked
// entries). This conditions finite-difference checks in 32-bit builds: the
// checked gradients become O(1), far above the float FD round-off floor,
// while any error in the base loss's gradient still shows up unchanged.
inline LossBuilder with_linear_probe(LossBuilder base,
                                     std::map<std::string, std::vector<int>> picks,
                                     const ParamMap& center, Real coeff = 4) {
  // Subtracting the probe term's value at `center` keeps the total loss
  // magnitude (and hence the float round-off floor) at the base loss's scale.
  // A coeff > 1 additionally shrinks the adaptive FD step (h ~ 1/coeff) and
  // with it the chance and size of ReLU kink crossings inside the stencil.
  Real offset = 0;
  for (const auto& [name, ks] : picks)
    for (int k : ks) offset += coeff * center.at(name).data[k];
  return [base = std::move(base), picks = std::move(picks), offset, coeff](
             Tape& t, const std::map<std::string, Tape::Id>& ids) {
    Tape::Id loss = base(t, ids);
    for (const auto& [name, ks] : picks) {
      Tensor mask = Tensor::zeros(t.value(ids.at(name)).shape);
      for (int k : ks) mask.data[k] = coeff;
      loss = t.add(loss, t.sum(t.mul(ids.at(name), t.leaf(std::move(mask)))));
    }
    Tensor shift = t.value(loss);
    for (Real& x : shift.data) x = -offset;
    return t.add(loss, t.leaf(std::move(shift)));
  };
}

// Returns, per tensor, the indices of the `count` largest-magnitude entries
// of the analytic gradient of `fn`.
inline std::map<std::string, std::vector<int>> top_grad_entries(const LossBuilder& fn,
                                                                const ParamMap& params,
                                                                int count) {
  Tape t;
  std::map<std::string, Tape::Id> ids;
  for (const auto& [name, v] : params) ids[name] = t.leaf(v);
  t.backward(fn(t, ids));
  std::map<std::string, std::vector<int>> picks;
  for (const auto& [name, v] : params) {
    const Tensor& g = t.grad(ids.at(name));
    std::vector<int> idx(g.data.size());
    std::iota(idx.begin(), idx.end(), 0);
    int n = std::min<int>(count, static_cast<int>(idx.size()));
    std::partial_sort(idx.begin(), idx.begin() + n, idx.end(), [&](int a, int b) {
      return std::abs(g.data[a]) > std::abs(g.data[b]);
    });
    idx.resize(n);
    picks[name] = idx;
  }
  return picks;
}

// Checks analytic gradients against central finite differences. With
// order == 4 a five-point stencil is used, and with top_by_grad the checked
// entries are those with the largest analytic gradient magnitudes (instead of
// a random sample), which keeps |g_fd| well above the finite-difference
// round-off floor eps*|loss|/h. Passing h <= 0 selects a per-entry step
// h_k = clamp(c / |g_k|, hmin, hmax): entries with large gradients get a tiny
// step (avoiding ReLU kink crossings) while tiny-gradient entries get a large
// step (keeping the FD quotient above round-off).
inline std::vector<GradCheckEntry> grad_check(const LossBuilder& fn, const ParamMap& params,
                                              int max_entries_per_tensor = 40,
                                              std::uint64_t seed = 17,
                                              double h = sizeof(Real) == 8 ? 1e-5 : 1e-3,
                                              int order = 2, bool top_by_grad = false) {
  Tape t;
  std::map<std::string, Tape::Id> ids;
  for (const auto& [name, v] : params) ids[name] = t.leaf(v);
  Tape::Id loss = fn(t, ids);
  t.backward(loss);

  std::vector<GradCheckEntry> report;
  Rng rng = make_rng(seed, 0x6C);
  for (const auto& [name, v] : params) {
    GradCheckEntry entry{name, 0.0, 0};
    const Tensor& analytic = t.grad(ids.at(name));
    std::vector<int> idx(v.data.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (static_cast<int>(idx.size()) > max_entries_per_tensor) {
      if (top_by_grad) {
        std::partial_sort(idx.begin(), idx.begin() + max_entries_per_tensor, idx.end(),
                          [&](int a, int b) {
                            return std::abs(analytic.data[a]) > std::abs(analytic.data[b]);
                          });
      } else {
        std::shuffle(idx.begin(), idx.end(), rng);
      }
      idx.resize(max_entries_per_tensor);
    }
    ParamMap probe = params;
    double diff2 = 0.0, fd2 = 0.0;
    for (int k : idx) {
      Real saved = probe[name].data[k];
      double hk = h;
      if (h <= 0.0) {
        const double c = sizeof(Real) == 8 ? 3e-7 : 3e-3;
        const double hmin = sizeof(Real) == 8 ? 1e-6 : 1e-3;
        hk = std::clamp(c / std::max(std::abs(double(analytic.data[k])), 1e-8), hmin, 3e-2);
      }
      auto at = [&](double delta) {
        probe[name].data[k] = saved + static_cast<Real>(delta);
        return run_loss(fn, probe);
      };
      double fd;
      if (order == 4) {
        // The order-2 estimate falls out of the same stencil points; large
        // disagreement between the two flags a ReLU/abs kink inside the
        // stencil, in which case we shrink the step and retry.
        fd = 0.0;
        double best_gap = std::numeric_limits<double>::infinity();
        for (int attempt = 0; attempt < 5; ++attempt) {
          double fp2 = at(2 * hk), fp1 = at(hk), fm1 = at(-hk), fm2 = at(-2 * hk);
          double fd4 = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * hk);
          double fd2 = (fp1 - fm1) / (2.0 * hk);
          double gap = std::abs(fd4 - fd2) / std::max(std::abs(fd4), 1e-6);
          if (gap < best_gap) {
            best_gap = gap;
            fd = fd4;
          }
          if (gap < (sizeof(Real) == 8 ? 1e-6 : 1e-3)) break;
          hk /= 8.0;
        }
      } else {
        fd = (at(hk) - at(-hk)) / (2.0 * hk);
      }
      probe[name].data[k] = saved;
      double ga = analytic.data[k];
      double rel = std::abs(ga - fd) / std::max(std::abs(fd), 1e-6);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      diff2 += (ga - fd) * (ga - fd);
      fd2 += fd * fd;
      ++entry.checked;
    }
    entry.l2_rel_err = std::sqrt(diff2) / std::max(std::sqrt(fd2), 1e-8);
    report.push_back(entry);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest JSON + flat little-endian f32 blob

inline void save_checkpoint(const std::string& dir, const ParamMap& params,
                            const nlohmann::json& extra = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream blob(dir + "/params.bin", std::ios::binary);
  check(blob.good(), "cannot open " + dir + "/params.bin");
  std::uint64_t offset = 0;
  for (const auto& [name, v] : params) {
    tensors.push_back({{"name", name}, {"shape", v.shape}, {"offset", offset}});
    for (Real x : v.data) {
      float f = static_cast<float>(x);
      blob.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
    offset += v.data.size();
  }
  nlohmann::json manifest{{"tensors", tensors}, {"total", offset}};
  if (!extra.is_null() && !extra.empty()) manifest["meta"] = extra;
  std::ofstream mf(dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
}

inline ParamMap load_checkpoint(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  check(mf.good(), "missing checkpoint manifest in " + dir);
  nlohmann::json manifest;
  mf >> manifest;
  std::ifstream blob(dir + "/params.bin", std::ios::binary);
  check(blob.good(), "missing checkpoint blob in " + dir);
  blob.seekg(0, std::ios::end);
  std::uint64_t bytes = static_cast<std::uint64_t>(blob.tellg());
  check(bytes == manifest.at("total").get<std::uint64_t>() * sizeof(float),
        "checkpoint blob length mismatch");
  blob.seekg(0);
  ParamMap out;
  for (const auto& tj : manifest.at("tensors")) {
    Tensor t = Tensor::zeros(tj.at("shape").get<std::vector<int>>());
    blob.seekg(static_cast<std::streamoff>(tj.at("offset").get<std::uint64_t>() * sizeof(float)));
    for (auto& x : t.data) {
      float f;
      blob.read(reinterpret_cast<char*>(&f), sizeof(float));
      x = static_cast<Real>(f);
    }
    out[tj.at("name").get<std::string>()] = std::move(t);
  }
  return out;
}

}  // namespace rpf
