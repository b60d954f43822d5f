#include "fedgeo/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "fedgeo/error.hpp"
#include "fedgeo/io.hpp"
#include "fedgeo/metrics.hpp"
#include "fedgeo/rng.hpp"

namespace fedgeo {

namespace {

constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kUniformTag = 0x5A;
constexpr std::uint64_t kEntropyTag = 0xEB5;
constexpr std::uint64_t kClientTag = 0xC1;

// Update indices ordered by ascending client id; rejects duplicates and
// mismatched shapes.
std::vector<std::size_t> reduction_order(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw EmptyDataset("aggregation needs at least one client update");
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return updates[a].client_id < updates[b].client_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (updates[order[i]].client_id == updates[order[i - 1]].client_id) {
      throw ShapeMismatch("duplicate client id " + std::to_string(updates[order[i]].client_id));
    }
  }
  const ModelDims& dims = updates[0].weights.dims();
  for (const auto& u : updates) {
    if (u.weights.dims() != dims) throw ShapeMismatch("client updates have different model shapes");
  }
  return order;
}

// out[i] = sum_k coeff[k] * layer_k[i], reduced in `order`. An entry that is
// identical across all clients is copied through, since any convex
// combination of equal values is that value.
void combine_layer(std::span<const ClientUpdate> updates, std::span<const std::size_t> order,
                   std::span<const double> coeff, int z, std::span<double> out) {
  const auto first = updates[order[0]].weights.layer(z);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v0 = first[i];
    bool same = true;
    double acc = 0.0;
    for (std::size_t k : order) {
      const double v = updates[k].weights.layer(z)[i];
      same = same && v == v0;
      acc += coeff[k] * v;
    }
    out[i] = same ? v0 : acc;
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::string_view to_string(Sampler s) { return s == Sampler::kUniform ? "uniform" : "ebs"; }
std::string_view to_string(Aggregator a) { return a == Aggregator::kFedAvg ? "fedavg" : "lwa"; }

Sampler parse_sampler(std::string_view s) {
  if (s == "uniform") return Sampler::kUniform;
  if (s == "ebs") return Sampler::kEntropy;
  throw ConfigError("federation.sampler must be 'uniform' or 'ebs', got '" + std::string(s) + "'");
}

Aggregator parse_aggregator(std::string_view s) {
  if (s == "fedavg") return Aggregator::kFedAvg;
  if (s == "lwa") return Aggregator::kLayerWise;
  throw ConfigError("federation.aggregator must be 'fedavg' or 'lwa', got '" + std::string(s) + "'");
}

void FederationConfig::validate() const {
  if (rounds < 1) throw ConfigError("federation.rounds must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("federation.fraction must be in (0, 1]");
  if (aggregator == Aggregator::kLayerWise) {
    if (lwa_layers.empty()) throw ConfigError("federation.lwa_layers must be nonempty when aggregator = lwa");
    std::set<int> seen;
    for (int z : lwa_layers) {
      if (z < 1 || z > kNumLayers) {
        throw ConfigError("federation.lwa_layers entry " + std::to_string(z) + " outside 1.." +
                          std::to_string(kNumLayers));
      }
      if (!seen.insert(z).second) throw ConfigError("federation.lwa_layers has duplicate " + std::to_string(z));
    }
  }
  if (!(q > 0.0) || !std::isfinite(q)) throw ConfigError("federation.q must be > 0");
  if (!(d_m >= 0.0) || !std::isfinite(d_m)) throw ConfigError("federation.d must be >= 0");
  if (prox_mu && !(*prox_mu >= 0.0 && std::isfinite(*prox_mu))) {
    throw ConfigError("federation.prox_mu must be >= 0");
  }
  if (threads < 1) throw ConfigError("federation.threads must be >= 1");
  hp.validate();
}

std::size_t FederationConfig::clients_per_round(std::size_t num_clients) const {
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(num_clients)));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(num_clients, 1));
}

ModelWeights apply_gaa(const ModelWeights& global, const SpatialWeightMatrix& s) {
  const ModelDims& dims = global.dims();
  const auto l1 = global.layer(1);
  Matrix emb(dims.num_locations, dims.embed_dim, std::vector<double>(l1.begin(), l1.end()));
  Matrix aligned = apply_to_embedding(s, emb);
  ModelWeights out = global;
  unflatten_layer(out, 1, aligned.data());
  return out;
}

std::vector<std::size_t> sample_uniform(std::size_t num_clients, std::size_t k, std::uint64_t seed,
                                        std::size_t round) {
  if (k < 1 || k > num_clients) throw ConfigError("clients per round must be in 1..K");
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng(mix_seed({seed, round, kUniformTag}));
  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(num_clients - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::size_t> sample_ebs(std::span<const double> entropies, std::size_t k, std::uint64_t seed,
                                    std::size_t round) {
  const std::size_t n = entropies.size();
  if (k < 1 || k > n) throw ConfigError("clients per round must be in 1..K");
  double total = 0.0;
  for (double e : entropies) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw ConfigError("client entropies must be finite and >= 0");
    total += e;
  }
  if (total == 0.0) {
    std::clog << "warning: every client has zero location entropy; sampling uniformly\n";
    return sample_uniform(n, k, seed, round);
  }

  // log(u^(1/p)) = log(u) / p; larger keys win. Zero-probability clients get
  // -inf and are ordered among themselves by an independent uniform key.
  struct Key {
    double primary;
    double secondary;
    std::size_t id;
  };
  Rng rng(mix_seed({seed, round, kEntropyTag}));
  std::vector<Key> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform_open_zero();
    const double tie = rng.uniform();
    const double p = entropies[i] / total;
    keys[i] = {p > 0.0 ? std::log(u) / p : -std::numeric_limits<double>::infinity(), tie, i};
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end(),
                    [](const Key& a, const Key& b) {
                      if (a.primary != b.primary) return a.primary > b.primary;
                      if (a.secondary != b.secondary) return a.secondary > b.secondary;
                      return a.id < b.id;
                    });
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(keys[i].id);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> fedavg_coefficients(std::span<const ClientUpdate> updates) {
  const auto order = reduction_order(updates);
  std::size_t total = 0;
  for (std::size_t k : order) total += updates[k].n_k;
  if (total == 0) throw EmptyDataset("client updates carry zero samples");
  std::vector<double> coeff(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    coeff[k] = static_cast<double>(updates[k].n_k) / static_cast<double>(total);
  }
  return coeff;
}

ModelWeights aggregate_fedavg(std::span<const ClientUpdate> updates) {
  const auto order = reduction_order(updates);
  const auto coeff = fedavg_coefficients(updates);
  ModelWeights out(updates[0].weights.dims());
  for (int z = 1; z <= kNumLayers; ++z) combine_layer(updates, order, coeff, z, out.layer(z));
  return out;
}

std::vector<double> layer_similarity(std::span<const ClientUpdate> updates, const ModelWeights& temp, int z) {
  const auto order = reduction_order(updates);
  if (temp.dims() != updates[0].weights.dims()) throw ShapeMismatch("temp model shape differs from updates");
  const auto t = temp.layer(z);
  const double scale = 1.0 / std::sqrt(static_cast<double>(t.size()));
  std::vector<double> score(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) score[k] = dot(updates[k].weights.layer(z), t) * scale;
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : score) mx = std::max(mx, s);
  std::vector<double> alpha(updates.size());
  double sum = 0.0;
  for (std::size_t k : order) {
    alpha[k] = std::exp(score[k] - mx);
    sum += alpha[k];
  }
  for (double& a : alpha) a /= sum;
  return alpha;
}

LwaAggregation aggregate_lwa(std::span<const ClientUpdate> updates, std::span<const int> lwa_layers) {
  const auto order = reduction_order(updates);
  LwaAggregation out;
  out.temp = aggregate_fedavg(updates);
  out.weights = out.temp;
  for (int z : lwa_layers) {
    auto alpha = layer_similarity(updates, out.temp, z);
    combine_layer(updates, order, alpha, z, out.weights.layer(z));
    out.alpha[static_cast<std::size_t>(z - 1)] = std::move(alpha);
  }
  return out;
}

ModelWeights initial_global_weights(std::size_t num_locations, const HyperParams& hp, std::uint64_t seed) {
  return init_weights(num_locations, hp, mix_seed({seed, kInitTag}));
}

Federation::Federation(const FederatedDataset& ds, FederationConfig cfg, const SpatialWeightMatrix* weights,
                       LocalTrainFn trainer)
    : ds_(ds), cfg_(std::move(cfg)), weights_(weights), trainer_(std::move(trainer)) {
  cfg_.validate();
  if (ds_.clients.empty()) throw EmptyDataset("federation needs at least one client");
  if (!ds_.is_split()) throw ConfigError("dataset must be split into train/test before federation");
  for (const auto& c : ds_.clients) {
    if (c.train().empty()) throw EmptyDataset("client " + std::to_string(c.client_id) + " has no training data");
  }
  if (cfg_.gaa) {
    if (weights_ == nullptr) throw ConfigError("GAA enabled but no spatial weight matrix given");
    if (weights_->size() != ds_.grid.num_locations()) {
      throw DimensionMismatch("spatial weight matrix does not match the grid");
    }
  }
  if (!trainer_) trainer_ = [](const ModelWeights& w, std::span<const Sample> data, const HyperParams& hp,
                               const std::optional<Proximal>& prox) { return train_local(w, data, hp, prox); };
  for (const auto& c : ds_.clients) entropies_.push_back(location_entropy(train_location_counts(c)));
  test_ = ds_.global_test();
}

FederationState Federation::initial_state() const {
  return {initial_global_weights(ds_.grid.num_locations(), cfg_.hp, cfg_.seed), 0};
}

std::vector<ClientUpdate> Federation::train_clients(const ModelWeights& broadcast,
                                                    std::span<const std::size_t> selected,
                                                    std::size_t round) const {
  auto job = [&](std::size_t idx) {
    const ClientDataset& c = ds_.clients[idx];
    HyperParams hp = cfg_.hp;
    hp.seed = mix_seed({cfg_.seed, round, kClientTag, static_cast<std::uint64_t>(c.client_id)});
    std::optional<Proximal> prox;
    if (cfg_.prox_mu) prox = Proximal{*cfg_.prox_mu, std::cref(broadcast)};
    LocalTrainResult r = trainer_(broadcast, c.train(), hp, prox);
    if (!r.weights.all_finite()) {
      throw Error("client " + std::to_string(c.client_id) + " produced non-finite weights in round " +
                  std::to_string(round));
    }
    return ClientUpdate{c.client_id, std::move(r.weights), c.train().size(), r.final_epoch_loss};
  };

  std::vector<ClientUpdate> updates(selected.size());
  if (cfg_.threads <= 1 || selected.size() == 1) {
    for (std::size_t i = 0; i < selected.size(); ++i) updates[i] = job(selected[i]);
    return updates;
  }
  for (std::size_t start = 0; start < selected.size(); start += cfg_.threads) {
    const std::size_t end = std::min(selected.size(), start + cfg_.threads);
    std::vector<std::future<ClientUpdate>> running;
    for (std::size_t i = start; i < end; ++i) running.push_back(std::async(std::launch::async, job, selected[i]));
    for (std::size_t i = start; i < end; ++i) updates[i] = running[i - start].get();
  }
  return updates;
}

RoundRecord Federation::run_round(FederationState& state) const {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t r = state.round;

  ModelWeights broadcast = cfg_.gaa ? apply_gaa(state.global, *weights_) : state.global;

  const std::size_t K = ds_.clients.size();
  const std::size_t k_round = cfg_.clients_per_round(K);
  const auto selected = cfg_.sampler == Sampler::kEntropy ? sample_ebs(entropies_, k_round, cfg_.seed, r)
                                                          : sample_uniform(K, k_round, cfg_.seed, r);

  std::vector<ClientUpdate> updates = train_clients(broadcast, selected, r);

  RoundRecord rec;
  rec.round = r;
  rec.sampler = cfg_.sampler;
  rec.aggregator = cfg_.aggregator;
  rec.gaa = cfg_.gaa;
  for (const auto& u : updates) rec.participants.push_back(u.client_id);

  ModelWeights temp;
  if (cfg_.aggregator == Aggregator::kLayerWise) {
    LwaAggregation agg = aggregate_lwa(updates, cfg_.lwa_layers);
    state.global = std::move(agg.weights);
    temp = std::move(agg.temp);
    rec.alpha = std::move(agg.alpha);
  } else {
    temp = aggregate_fedavg(updates);
    state.global = temp;
  }
  rec.drift = client_drift(updates, temp);
  double loss = 0.0;
  for (const auto& u : updates) loss += u.train_loss;
  rec.mean_train_loss = loss / static_cast<double>(updates.size());

  if (!test_.empty()) {
    static constexpr std::size_t kKs[] = {1, 5};
    const std::size_t L = state.global.dims().num_locations;
    if (L >= 5) {
      const EvalReport ev = acc_at_k(state.global, test_, kKs);
      rec.acc1 = ev.acc_at.at(1);
      rec.acc5 = ev.acc_at.at(5);
    } else {
      const std::size_t ks[] = {1, L};
      const EvalReport ev = acc_at_k(state.global, test_, ks);
      rec.acc1 = ev.acc_at.at(1);
      rec.acc5 = ev.acc_at.at(L);
    }
  }
  ++state.round;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

FederationResult Federation::run() const {
  FederationState state = initial_state();
  FederationResult out;
  for (std::size_t r = 0; r < cfg_.rounds; ++r) out.records.push_back(run_round(state));
  out.final_weights = std::move(state.global);
  return out;
}

RoundRecord run_round(FederationState& state, const FederatedDataset& ds, const FederationConfig& cfg,
                      const SpatialWeightMatrix* weights) {
  return Federation(ds, cfg, weights).run_round(state);
}

FederationResult run_federation(const FederatedDataset& ds, const FederationConfig& cfg,
                                const SpatialWeightMatrix* weights) {
  return Federation(ds, cfg, weights).run();
}

CentralizedResult train_centralized(const FederatedDataset& ds, const HyperParams& hp, std::size_t epochs,
                                    std::uint64_t seed) {
  const auto train = ds.global_train();
  if (train.empty()) throw EmptyDataset("centralized training needs training samples");
  if (epochs < 1) throw ConfigError("centralized epochs must be >= 1");
  SgdTrainer trainer(initial_global_weights(ds.grid.num_locations(), hp, seed), hp);
  const auto test = ds.global_test();
  const std::size_t L = ds.grid.num_locations();
  const std::size_t ks[] = {1, std::min<std::size_t>(5, L)};

  CentralizedResult out;
  for (std::size_t e = 0; e < epochs; ++e) {
    out.loss.push_back(trainer.run_epoch(train));
    if (!test.empty()) {
      const EvalReport ev = acc_at_k(trainer.weights(), test, ks);
      out.acc1.push_back(ev.acc_at.at(ks[0]));
      out.acc5.push_back(ev.acc_at.at(ks[1]));
    }
  }
  out.weights = std::move(trainer).release();
  return out;
}

std::string format_round_log(std::span<const RoundRecord> records) {
  std::ostringstream out;
  out << "round,sampler,aggregator,gaa,acc1,acc5,drift,seconds\n";
  for (const auto& r : records) {
    out << r.round << ',' << to_string(r.sampler) << ',' << to_string(r.aggregator) << ',' << (r.gaa ? 1 : 0)
        << ',' << format_double(r.acc1) << ',' << format_double(r.acc5) << ',' << format_double(r.drift) << ','
        << format_fixed(r.seconds, 3) << '\n';
  }
  return out.str();
}

void write_round_log(std::span<const RoundRecord> records, const std::filesystem::path& path) {
  write_file_atomic(path, format_round_log(records));
}

}  // namespace fedgeo
