#ifndef FEDGEO_FEDERATION_HPP
#define FEDGEO_FEDERATION_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedgeo/geogrid.hpp"
#include "fedgeo/mobility.hpp"
#include "fedgeo/model.hpp"

namespace fedgeo {

enum class Sampler { kUniform, kEntropy };
enum class Aggregator { kFedAvg, kLayerWise };

std::string_view to_string(Sampler s);
std::string_view to_string(Aggregator a);
/// "uniform" | "ebs"; throws ConfigError.
Sampler parse_sampler(std::string_view s);
/// "fedavg" | "lwa"; throws ConfigError.
Aggregator parse_aggregator(std::string_view s);

struct FederationConfig {
  std::size_t rounds = 50;
  /// Fraction G of clients sampled per round.
  double fraction = 0.2;
  Sampler sampler = Sampler::kUniform;
  Aggregator aggregator = Aggregator::kFedAvg;
  bool gaa = false;
  /// Layers (1-based) aggregated by similarity when aggregator is LWA.
  std::vector<int> lwa_layers{1, 2, 3};
  double q = 1e4;
  double d_m = 150.0;
  std::optional<double> prox_mu;
  HyperParams hp;
  std::uint64_t seed = 0;
  /// Worker threads for client training within a round.
  std::size_t threads = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// K^r = max(floor(G * K), 1).
  std::size_t clients_per_round(std::size_t num_clients) const;
};

struct ClientUpdate {
  int client_id = 0;
  ModelWeights weights;
  std::size_t n_k = 0;
  double train_loss = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  Sampler sampler = Sampler::kUniform;
  Aggregator aggregator = Aggregator::kFedAvg;
  bool gaa = false;
  /// Participating client ids, ascending.
  std::vector<int> participants;
  /// alpha[z-1][i]: similarity weight of participants[i] for layer z; empty
  /// for layers that were not similarity-aggregated.
  std::array<std::vector<double>, kNumLayers> alpha;
  double acc1 = 0.0;
  double acc5 = 0.0;
  double drift = 0.0;
  double mean_train_loss = 0.0;
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Server-side building blocks

/// Replaces the embedding layer with S* x embedding; other layers untouched.
ModelWeights apply_gaa(const ModelWeights& global, const SpatialWeightMatrix& s);

/// k distinct client indices in [0, num_clients), uniform without
/// replacement; ascending. Deterministic in (seed, round).
std::vector<std::size_t> sample_uniform(std::size_t num_clients, std::size_t k, std::uint64_t seed,
                                        std::size_t round);

/// k distinct client indices drawn without replacement with probability
/// proportional to entropy, via exponential keys u^(1/p). Zero-entropy
/// clients are only taken once the positive ones run out; if all are zero
/// the draw falls back to uniform with a warning. Ascending.
std::vector<std::size_t> sample_ebs(std::span<const double> entropies, std::size_t k,
                                    std::uint64_t seed, std::size_t round);

/// n_k / sum(n), aligned with updates.
std::vector<double> fedavg_coefficients(std::span<const ClientUpdate> updates);

/// Sample-weighted average of every layer. Reduction runs in ascending
/// client-id order, so the result does not depend on the order of updates.
ModelWeights aggregate_fedavg(std::span<const ClientUpdate> updates);

/// Softmax over clients of <W_{z,k}, W_{z,temp}> / sqrt(d_w), aligned with
/// updates.
std::vector<double> layer_similarity(std::span<const ClientUpdate> updates, const ModelWeights& temp,
                                     int z);

struct LwaAggregation {
  ModelWeights weights;
  /// FedAvg model the similarities were measured against.
  ModelWeights temp;
  /// Per-layer weights aligned with updates; empty for FedAvg layers.
  std::array<std::vector<double>, kNumLayers> alpha;
};

/// FedAvg temp model, then similarity-weighted layers for z in lwa_layers.
LwaAggregation aggregate_lwa(std::span<const ClientUpdate> updates, std::span<const int> lwa_layers);

// ---------------------------------------------------------------------------
// Round orchestration

using LocalTrainFn = std::function<LocalTrainResult(const ModelWeights&, std::span<const Sample>,
                                                    const HyperParams&, const std::optional<Proximal>&)>;

struct FederationState {
  ModelWeights global;
  std::size_t round = 0;
};

struct FederationResult {
  std::vector<RoundRecord> records;
  ModelWeights final_weights;
};

/// Initial global model for a run seed.
ModelWeights initial_global_weights(std::size_t num_locations, const HyperParams& hp, std::uint64_t seed);

/// Server loop over a split dataset. The spatial weight matrix is only read
/// when GAA is enabled.
class Federation {
 public:
  Federation(const FederatedDataset& ds, FederationConfig cfg, const SpatialWeightMatrix* weights,
             LocalTrainFn trainer = {});

  FederationState initial_state() const;
  RoundRecord run_round(FederationState& state) const;
  FederationResult run() const;

  /// Entropies of the clients' training splits, in client order.
  const std::vector<double>& entropies() const noexcept { return entropies_; }
  const FederationConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<ClientUpdate> train_clients(const ModelWeights& broadcast,
                                          std::span<const std::size_t> selected,
                                          std::size_t round) const;

  const FederatedDataset& ds_;
  FederationConfig cfg_;
  const SpatialWeightMatrix* weights_;
  LocalTrainFn trainer_;
  std::vector<double> entropies_;
  std::vector<Sample> test_;
};

RoundRecord run_round(FederationState& state, const FederatedDataset& ds, const FederationConfig& cfg,
                      const SpatialWeightMatrix* weights);
FederationResult run_federation(const FederatedDataset& ds, const FederationConfig& cfg,
                                const SpatialWeightMatrix* weights);

struct CentralizedResult {
  ModelWeights weights;
  std::vector<double> acc1;
  std::vector<double> acc5;
  std::vector<double> loss;
};

/// Trains one model on the pooled training splits (client order), evaluating
/// on the global test split after each epoch. Starts from
/// initial_global_weights(seed); batches are shuffled with hp.seed.
CentralizedResult train_centralized(const FederatedDataset& ds, const HyperParams& hp, std::size_t epochs,
                                    std::uint64_t seed);

/// Round log CSV: round,sampler,aggregator,gaa,acc1,acc5,drift,seconds.
std::string format_round_log(std::span<const RoundRecord> records);
void write_round_log(std::span<const RoundRecord> records, const std::filesystem::path& path);

}  // namespace fedgeo

#endif  // FEDGEO_FEDERATION_HPP
