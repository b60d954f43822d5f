// Independent reference computations used as test oracles. Nothing here may
// call into the code paths it checks.
#ifndef FEDGEO_TESTS_ORACLES_HPP
#define FEDGEO_TESTS_ORACLES_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "fedgeo/geogrid.hpp"
#include "fedgeo/model.hpp"

namespace fedgeo::testing {

/// Dense O(|L|^2) spatial weights straight from the cell-center geometry,
/// row-normalized when requested.
inline std::vector<std::vector<double>> brute_force_spatial_weights(const GridSpec& g, double d, double q,
                                                                     bool normalize) {
  const std::size_t n = g.n_rows * g.n_cols;
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double ri = static_cast<double>(i / g.n_cols), ci = static_cast<double>(i % g.n_cols);
    for (std::size_t j = 0; j < n; ++j) {
      const double rj = static_cast<double>(j / g.n_cols), cj = static_cast<double>(j % g.n_cols);
      if (i == j) {
        m[i][j] = q;
      } else if (g.cell_size_m * std::hypot(ri - rj, ci - cj) < d) {
        m[i][j] = 1.0;
      }
    }
    if (normalize) {
      double s = 0.0;
      for (double v : m[i]) s += v;
      for (double& v : m[i]) v /= s;
    }
  }
  return m;
}

/// Central finite differences of f over every parameter of w.
inline ModelWeights finite_difference_grad(const ModelWeights& w, const std::function<double(const ModelWeights&)>& f,
                                           double step) {
  ModelWeights grad(w.dims());
  ModelWeights probe = w;
  for (int z = 1; z <= kNumLayers; ++z) {
    auto p = probe.layer(z);
    auto g = grad.layer(z);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + step;
      const double up = f(probe);
      p[i] = orig - step;
      const double down = f(probe);
      p[i] = orig;
      g[i] = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

/// Direct softmax cross-entropy of one sample from explicit loops over the
/// recurrence, used by the finite-difference oracle.
inline double reference_sample_loss(const ModelWeights& w, const std::vector<LocationId>& window, LocationId target) {
  const std::size_t E = w.dims().embed_dim, H = w.dims().hidden_dim, L = w.dims().num_locations;
  std::vector<double> h(H, 0.0);
  for (const auto& l : window) {
    std::vector<double> next(H);
    for (std::size_t j = 0; j < H; ++j) {
      double a = w.b_h(j);
      for (std::size_t i = 0; i < E; ++i) a += w.embedding_row(l.index)[i] * w.w_xh(i, j);
      for (std::size_t i = 0; i < H; ++i) a += h[i] * w.w_hh(i, j);
      next[j] = std::tanh(a);
    }
    h = next;
  }
  std::vector<double> logits(L);
  double mx = -INFINITY;
  for (std::size_t l = 0; l < L; ++l) {
    double a = w.b_out(l);
    for (std::size_t j = 0; j < H; ++j) a += h[j] * w.w_out(j, l);
    logits[l] = a;
    mx = std::max(mx, a);
  }
  double z = 0.0;
  for (double a : logits) z += std::exp(a - mx);
  return std::log(z) + mx - logits[target.index];
}

/// Scalar federated problem: client k pulls every parameter toward target[k]
/// with plain gradient steps on 0.5 * (w - target)^2.
struct ScalarProblem {
  std::vector<double> targets;
  std::vector<std::size_t> train_sizes;
  double lr = 0.3;
  std::size_t local_steps = 3;
};

inline double scalar_local_update(double w, double target, const ScalarProblem& p) {
  for (std::size_t s = 0; s < p.local_steps; ++s) w = w - p.lr * (w - target);
  return w;
}

/// Textbook FedAvg over all clients for `rounds` rounds, on one scalar.
inline std::vector<double> reference_fedavg(double w0, const ScalarProblem& p, std::size_t rounds) {
  std::size_t total = 0;
  for (std::size_t n : p.train_sizes) total += n;
  std::vector<double> trace;
  double w = w0;
  for (std::size_t r = 0; r < rounds; ++r) {
    double next = 0.0;
    for (std::size_t k = 0; k < p.targets.size(); ++k) {
      next += (static_cast<double>(p.train_sizes[k]) / static_cast<double>(total)) *
              scalar_local_update(w, p.targets[k], p);
    }
    w = next;
    trace.push_back(w);
  }
  return trace;
}

}  // namespace fedgeo::testing

#endif  // FEDGEO_TESTS_ORACLES_HPP
