#include "dynanav/bo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dynanav {

SearchSpace SearchSpace::from_config(const RunConfig& cfg) {
  SearchSpace s;
  int d = cfg.decoder_layers - 1 + 1;
  s.lo.assign(d, 0.0);
  s.hi.assign(d, cfg.eta_max);
  s.hi.back() = cfg.gate_dist_max;
  return s;
}

Constraints Constraints::from_config(const RunConfig& cfg, int static_tokens,
                                     const CostCoefficients& coeffs) {
  Constraints c;
  double sf = static_cast<double>(cost::static_flops(cfg, static_tokens));
  double sm = static_cast<double>(cost::static_mem_elems(cfg, static_tokens));
  c.f_max = cfg.flops_budget_ratio * sf;
  c.t_max = cfg.time_budget_ratio * sf * coeffs.time_per_flop;
  c.g_max = cfg.mem_budget_ratio * sm * coeffs.mem_per_elem;
  c.sim_a_min = cfg.sim_a_min;
  c.sim_w_min = cfg.sim_w_min;
  c.xi = cfg.xi;
  return c;
}

ExitThresholds thresholds_from_point(const std::vector<double>& x, const RunConfig& cfg) {
  int ne = cfg.decoder_layers - 1;
  if (static_cast<int>(x.size()) != ne + 1)
    throw ShapeError("thresholds_from_point: expected " + std::to_string(ne + 1) +
                     " coordinates");
  ExitThresholds th;
  th.eta.assign(x.begin(), x.begin() + ne);
  th.pre_gate.feature_dist_threshold = x.back();
  th.pre_gate.max_masked_obs = cfg.max_masked_obs;
  th.pre_gate.max_masked_goal = cfg.max_masked_goal;
  th.pre_decoder_enabled = true;
  th.layer_exit_enabled = true;
  return th;
}

PolicyEval eval_dynamic_policy(const Model& model, const std::vector<Episode>& episodes,
                               const ExitThresholds& th, const RunConfig& cfg,
                               const CostCoefficients& coeffs, int stride) {
  if (episodes.empty()) throw IoError("eval_dynamic_policy: empty episode set");
  if (stride < 1) throw ShapeError("eval_dynamic_policy: stride must be >= 1");
  std::vector<ExitTrace> traces;
  std::vector<Prediction> preds;
  std::vector<Targets> targets;
  for (const Episode& ep : episodes) {
    int n = ep.steps();
    Image goal = ep.goal_image();
    for (int t = cfg.past_frames; t <= n - 2; t += stride) {
      ExitTrace tr = run_dynamic(sample_window(ep, t, cfg), goal, model, th, coeffs);
      preds.push_back(tr.pred);
      targets.push_back(sample_targets(ep, t, n - 1 - t, cfg));
      traces.push_back(std::move(tr));
    }
  }
  Metrics m = cosine_metrics(preds, targets);
  PolicyEval pe;
  pe.sim_a = m.sim_a / 100.0;
  pe.sim_w = m.sim_w / 100.0;
  pe.J = pe.sim_a + cfg.lambda * pe.sim_w;
  pe.cost = trajectory_costs(traces);
  return pe;
}

double penalty_P(const CostReport& cost, double sim_a, double sim_w, const Constraints& c) {
  if (c.xi.size() != 3) throw ShapeError("penalty_P: xi must have 3 weights");
  double g_t = (cost.mean_time_units - c.t_max) / c.t_max;
  double g_g = (cost.peak_mem_units - c.g_max) / c.g_max;
  double g_f = (cost.mean_flops - c.f_max) / c.f_max;
  double p = c.xi[0] * std::max(0.0, g_t) + c.xi[1] * std::max(0.0, g_g) +
             c.xi[2] * std::max(0.0, g_f);
  p += std::max(0.0, c.sim_a_min - sim_a) + std::max(0.0, c.sim_w_min - sim_w);
  return p;
}

EvalResult evaluate_thresholds(const Model& model, const std::vector<Episode>& episodes,
                               const ExitThresholds& th, const Constraints& c,
                               const RunConfig& cfg, const CostCoefficients& coeffs,
                               int stride) {
  PolicyEval pe = eval_dynamic_policy(model, episodes, th, cfg, coeffs, stride);
  EvalResult r;
  r.J = pe.J;
  r.sim_a = pe.sim_a;
  r.sim_w = pe.sim_w;
  r.cost = pe.cost;
  r.P = penalty_P(pe.cost, pe.sim_a, pe.sim_w, c);
  r.V = r.J - r.P;
  return r;
}

// ---- Gaussian-process surrogate -------------------------------------------

namespace {

struct GP {
  std::vector<std::vector<double>> x;  // normalized inputs
  std::vector<double> y;               // standardized targets
  double y_mean = 0.0, y_std = 1.0;
  std::vector<double> ls;  // per-dimension length scales
  double sn2 = 1e-6;
  std::vector<std::vector<double>> chol;  // lower Cholesky of K
  std::vector<double> alpha;              // K^{-1} y
};

double kernel(const std::vector<double>& a, const std::vector<double>& b,
              const std::vector<double>& ls) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = (a[i] - b[i]) / ls[i];
    s += d * d;
  }
  return std::exp(-0.5 * s);
}

// Cholesky of K + sn2 I; returns false if not positive definite.
bool cholesky(std::vector<std::vector<double>>& m) {
  std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = m[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= m[i][k] * m[j][k];
      if (i == j) {
        if (s <= 0.0) return false;
        m[i][i] = std::sqrt(s);
      } else {
        m[i][j] = s / m[j][j];
      }
    }
    for (std::size_t j = i + 1; j < n; ++j) m[i][j] = 0.0;
  }
  return true;
}

std::vector<double> chol_solve(const std::vector<std::vector<double>>& L,
                               const std::vector<double>& b) {
  std::size_t n = L.size();
  std::vector<double> z(n), out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= L[i][k] * z[k];
    z[i] = s / L[i][i];
  }
  for (std::size_t ii = n; ii > 0; --ii) {
    std::size_t i = ii - 1;
    double s = z[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= L[k][i] * out[k];
    out[i] = s / L[i][i];
  }
  return out;
}

// Negative log marginal likelihood for the current (ls, sn2); +inf on failure.
double gp_nll(const GP& gp) {
  std::size_t n = gp.x.size();
  std::vector<std::vector<double>> K(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      K[i][j] = K[j][i] = kernel(gp.x[i], gp.x[j], gp.ls) + (i == j ? gp.sn2 : 0.0);
  if (!cholesky(K)) return std::numeric_limits<double>::infinity();
  std::vector<double> alpha = chol_solve(K, gp.y);
  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i) nll += 0.5 * gp.y[i] * alpha[i] + std::log(K[i][i]);
  return nll;
}

void gp_factorize(GP& gp) {
  std::size_t n = gp.x.size();
  std::vector<std::vector<double>> K(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      K[i][j] = K[j][i] = kernel(gp.x[i], gp.x[j], gp.ls) + (i == j ? gp.sn2 : 0.0);
  if (!cholesky(K)) {
    gp.sn2 *= 100.0;
    gp_factorize(gp);
    return;
  }
  gp.chol = K;
  gp.alpha = chol_solve(K, gp.y);
}

GP gp_fit(const std::vector<std::vector<double>>& x, const std::vector<double>& raw_y) {
  GP gp;
  gp.x = x;
  std::size_t n = raw_y.size();
  double mean = 0.0;
  for (double v : raw_y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : raw_y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  gp.y_mean = mean;
  gp.y_std = var > 1e-18 ? std::sqrt(var) : 1.0;
  gp.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) gp.y[i] = (raw_y[i] - mean) / gp.y_std;

  std::size_t d = x.front().size();
  gp.ls.assign(d, 0.5);
  static const double ls_grid[] = {0.08, 0.15, 0.25, 0.4, 0.6, 1.0, 1.6, 2.5};
  static const double sn_grid[] = {1e-6, 1e-4, 1e-2};
  // Coordinate-descent maximum likelihood over the small grids.
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < d; ++i) {
      double best = std::numeric_limits<double>::infinity(), best_ls = gp.ls[i];
      for (double cand : ls_grid) {
        gp.ls[i] = cand;
        double v = gp_nll(gp);
        if (v < best) {
          best = v;
          best_ls = cand;
        }
      }
      gp.ls[i] = best_ls;
    }
    double best = std::numeric_limits<double>::infinity(), best_sn = gp.sn2;
    for (double cand : sn_grid) {
      gp.sn2 = cand;
      double v = gp_nll(gp);
      if (v < best) {
        best = v;
        best_sn = cand;
      }
    }
    gp.sn2 = best_sn;
  }
  gp_factorize(gp);
  return gp;
}

void gp_predict(const GP& gp, const std::vector<double>& xq, double& mu, double& sigma) {
  std::size_t n = gp.x.size();
  std::vector<double> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = kernel(xq, gp.x[i], gp.ls);
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m += k[i] * gp.alpha[i];
  // v = L^{-1} k
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = k[i];
    for (std::size_t j = 0; j < i; ++j) s -= gp.chol[i][j] * v[j];
    v[i] = s / gp.chol[i][i];
  }
  double var = 1.0 + gp.sn2;
  for (std::size_t i = 0; i < n; ++i) var -= v[i] * v[i];
  mu = gp.y_mean + gp.y_std * m;
  sigma = gp.y_std * std::sqrt(std::max(var, 1e-12));
}

double norm_cdf(double z) { return 0.5 * std::erfc(-z / M_SQRT2); }
double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

double expected_improvement(const GP& gp, const std::vector<double>& xq, double best) {
  double mu, sigma;
  gp_predict(gp, xq, mu, sigma);
  double z = (mu - best - 0.01) / sigma;
  return sigma * (z * norm_cdf(z) + norm_pdf(z));
}

}  // namespace

void save_history(const std::string& path, const BOState& state) {
  std::ostringstream os;
  os.precision(17);
  os << "bo_version 1\n";
  for (const BORecord& rec : state.history) {
    os << "eval";
    for (double v : rec.x) os << " " << v;
    os << " | " << rec.r.J << " " << rec.r.P << " " << rec.r.V << " " << rec.r.sim_a << " "
       << rec.r.sim_w << " " << rec.r.cost.mean_flops << " " << rec.r.cost.mean_time_units
       << " " << rec.r.cost.peak_mem_units << "\n";
  }
  atomic_write_file(path, os.str());
}

BOState load_history(const std::string& path, int dim) {
  BOState state;
  std::ifstream is(path);
  if (!is) return state;  // absent file: fresh start
  std::string line;
  if (!std::getline(is, line) || line != "bo_version 1")
    throw IoError("bo history: bad header in " + path);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != "eval") throw IoError("bo history: bad record in " + path);
    BORecord rec;
    rec.x.resize(dim);
    for (double& v : rec.x) ls >> v;
    std::string sep;
    ls >> sep;
    if (sep != "|") throw IoError("bo history: malformed record in " + path);
    ls >> rec.r.J >> rec.r.P >> rec.r.V >> rec.r.sim_a >> rec.r.sim_w >>
        rec.r.cost.mean_flops >> rec.r.cost.mean_time_units >> rec.r.cost.peak_mem_units;
    if (!ls) throw IoError("bo history: truncated record in " + path);
    state.history.push_back(std::move(rec));
  }
  for (const BORecord& rec : state.history)
    if (rec.r.V > state.best_v) {
      state.best_v = rec.r.V;
      state.best_x = rec.x;
    }
  return state;
}

BOState optimize(const SearchSpace& space, const ObjectiveFn& objective, int budget,
                 Rng& rng, const std::vector<std::vector<double>>& seed_points,
                 const std::string& history_path) {
  int d = space.dim();
  if (d < 1) throw ShapeError("optimize: empty search space");
  if (budget < d + 2)
    throw IoError("optimize: budget " + std::to_string(budget) + " below dimension + 2");
  for (int i = 0; i < d; ++i)
    if (space.lo[i] > space.hi[i]) throw ShapeError("optimize: inverted bounds");

  auto width = [&](int i) { return space.hi[i] - space.lo[i]; };
  auto normalize = [&](const std::vector<double>& x) {
    std::vector<double> u(d);
    for (int i = 0; i < d; ++i) u[i] = width(i) > 0.0 ? (x[i] - space.lo[i]) / width(i) : 0.0;
    return u;
  };
  auto denormalize = [&](const std::vector<double>& u) {
    std::vector<double> x(d);
    for (int i = 0; i < d; ++i) x[i] = space.lo[i] + u[i] * width(i);
    return x;
  };
  auto clamp_point = [&](std::vector<double> x) {
    for (int i = 0; i < d; ++i) x[i] = std::clamp(x[i], space.lo[i], space.hi[i]);
    return x;
  };

  BOState state = history_path.empty() ? BOState{} : load_history(history_path, d);
  auto evaluate = [&](const std::vector<double>& x) {
    BORecord rec;
    rec.x = x;
    rec.r = objective(x);
    if (rec.r.V > state.best_v) {
      state.best_v = rec.r.V;
      state.best_x = rec.x;
    }
    state.history.push_back(std::move(rec));
    if (!history_path.empty()) save_history(history_path, state);
  };

  int n0 = (budget + 3) / 4;
  // Initial design: caller seeds, then Latin hypercube strata.
  std::vector<std::vector<double>> init;
  for (const auto& sp : seed_points) {
    if (static_cast<int>(sp.size()) != d) throw ShapeError("optimize: bad seed point size");
    init.push_back(clamp_point(sp));
  }
  int n_lhs = std::max(0, n0 - static_cast<int>(init.size()));
  if (n_lhs > 0) {
    std::vector<std::vector<int>> strata(d, std::vector<int>(n_lhs));
    for (int i = 0; i < d; ++i) {
      for (int s = 0; s < n_lhs; ++s) strata[i][s] = s;
      rng.shuffle(strata[i]);
    }
    for (int s = 0; s < n_lhs; ++s) {
      std::vector<double> u(d);
      for (int i = 0; i < d; ++i) u[i] = (strata[i][s] + rng.uniform()) / n_lhs;
      init.push_back(denormalize(u));
    }
  }
  for (const auto& x : init) {
    if (static_cast<int>(state.history.size()) >= budget) break;
    evaluate(x);
  }

  while (static_cast<int>(state.history.size()) < budget) {
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (const BORecord& rec : state.history) {
      xs.push_back(normalize(rec.x));
      ys.push_back(rec.r.V);
    }
    GP gp = gp_fit(xs, ys);
    double best_y = *std::max_element(ys.begin(), ys.end());

    // Acquisition: random multi-start plus local pattern refinement.
    std::vector<double> best_u(d, 0.5);
    double best_ei = -1.0;
    for (int s = 0; s < 256; ++s) {
      std::vector<double> u(d);
      for (int i = 0; i < d; ++i) u[i] = rng.uniform();
      double ei = expected_improvement(gp, u, best_y);
      if (ei > best_ei) {
        best_ei = ei;
        best_u = u;
      }
    }
    double step = 0.12;
    for (int it = 0; it < 40; ++it) {
      std::vector<double> u = best_u;
      for (int i = 0; i < d; ++i)
        u[i] = std::clamp(u[i] + step * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
      double ei = expected_improvement(gp, u, best_y);
      if (ei > best_ei) {
        best_ei = ei;
        best_u = u;
      } else {
        step *= 0.9;
      }
    }
    evaluate(clamp_point(denormalize(best_u)));
  }
  return state;
}

}  // namespace dynanav
