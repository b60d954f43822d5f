#ifndef FEDGEO_MODEL_HPP
#define FEDGEO_MODEL_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedgeo/geogrid.hpp"
#include "fedgeo/mobility.hpp"

namespace fedgeo {

/// Number of aggregation layers: embedding, encoder, output.
inline constexpr int kNumLayers = 3;

struct ModelDims {
  std::size_t num_locations = 0;  // |L|
  std::size_t embed_dim = 0;      // E
  std::size_t hidden_dim = 0;     // H

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Parameters of the next-location model, stored as one flat vector per
/// layer. Flattened layer layouts (all row-major):
///   layer 1: embedding [|L| x E]
///   layer 2: W_xh [E x H], W_hh [H x H], b_h [H]
///   layer 3: W_out [H x |L|], b_out [|L|]
class ModelWeights {
 public:
  ModelWeights() = default;
  /// Zero-filled weights of the given shape.
  explicit ModelWeights(const ModelDims& dims);

  const ModelDims& dims() const noexcept { return dims_; }

  /// Layers are numbered 1..kNumLayers; throws InvalidLayerIndex otherwise.
  std::span<double> layer(int z);
  std::span<const double> layer(int z) const;
  std::size_t layer_size(int z) const { return layer(z).size(); }
  std::size_t total_size() const;

  std::span<const double> embedding_row(std::size_t loc) const {
    return {layers_[0].data() + loc * dims_.embed_dim, dims_.embed_dim};
  }
  std::span<double> embedding_row(std::size_t loc) {
    return {layers_[0].data() + loc * dims_.embed_dim, dims_.embed_dim};
  }
  double& w_xh(std::size_t i, std::size_t j) { return layers_[1][i * dims_.hidden_dim + j]; }
  double w_xh(std::size_t i, std::size_t j) const { return layers_[1][i * dims_.hidden_dim + j]; }
  double& w_hh(std::size_t i, std::size_t j) { return layers_[1][whh_offset() + i * dims_.hidden_dim + j]; }
  double w_hh(std::size_t i, std::size_t j) const { return layers_[1][whh_offset() + i * dims_.hidden_dim + j]; }
  double& b_h(std::size_t j) { return layers_[1][bh_offset() + j]; }
  double b_h(std::size_t j) const { return layers_[1][bh_offset() + j]; }
  double& w_out(std::size_t j, std::size_t l) { return layers_[2][j * dims_.num_locations + l]; }
  double w_out(std::size_t j, std::size_t l) const { return layers_[2][j * dims_.num_locations + l]; }
  double& b_out(std::size_t l) { return layers_[2][bout_offset() + l]; }
  double b_out(std::size_t l) const { return layers_[2][bout_offset() + l]; }

  bool all_finite() const;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;

 private:
  std::size_t whh_offset() const { return dims_.embed_dim * dims_.hidden_dim; }
  std::size_t bh_offset() const { return whh_offset() + dims_.hidden_dim * dims_.hidden_dim; }
  std::size_t bout_offset() const { return dims_.hidden_dim * dims_.num_locations; }

  ModelDims dims_;
  std::array<std::vector<double>, kNumLayers> layers_;
};

std::vector<double> flatten_layer(const ModelWeights& w, int z);
/// Overwrites layer z; throws ShapeMismatch when the length differs.
void unflatten_layer(ModelWeights& w, int z, std::span<const double> values);
/// Layers 1..Z concatenated.
std::vector<double> flatten_all(const ModelWeights& w);

struct HyperParams {
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 10;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Uniform(-a, a) with a = 1/sqrt(fan_in): E for the embedding rows, E for
/// W_xh, H for W_hh and W_out. Biases are zero.
ModelWeights init_weights(std::size_t num_locations, const HyperParams& hp, std::uint64_t seed);

/// Logits over all locations for one input window. Throws InvalidLocationId.
std::vector<double> forward(const ModelWeights& w, std::span<const LocationId> window);

/// FedProx term (mu/2)||w - anchor||^2 added to the local loss.
struct Proximal {
  double mu = 0.0;
  std::reference_wrapper<const ModelWeights> anchor;
};

struct LossAndGrad {
  double loss = 0.0;
  ModelWeights grad;
};

/// Mean softmax cross-entropy over the batch and its exact gradient
/// (backpropagation through time), plus the proximal term when given.
LossAndGrad loss_and_grad(const ModelWeights& w, std::span<const Sample> batch,
                          const std::optional<Proximal>& prox = std::nullopt);

/// Mini-batch SGD with momentum and L2 weight decay. Momentum buffers live as
/// long as the trainer. Epoch e shuffles with mix_seed(hp.seed, e).
class SgdTrainer {
 public:
  SgdTrainer(ModelWeights start, const HyperParams& hp, std::optional<Proximal> prox = std::nullopt);

  /// One pass over data; returns the sample-weighted mean batch loss.
  double run_epoch(std::span<const Sample> data);

  const ModelWeights& weights() const noexcept { return weights_; }
  ModelWeights release() && { return std::move(weights_); }
  std::size_t epochs_done() const noexcept { return epoch_; }

  /// Applies one update with the given gradient (weight decay and momentum
  /// included).
  void step(const ModelWeights& grad);

 private:
  ModelWeights weights_;
  ModelWeights velocity_;
  HyperParams hp_;
  std::optional<Proximal> prox_;
  std::size_t epoch_ = 0;
};

struct LocalTrainResult {
  ModelWeights weights;
  double final_epoch_loss = 0.0;
};

/// Runs hp.local_epochs epochs from fresh momentum. Throws EmptyDataset.
LocalTrainResult train_local(const ModelWeights& w, std::span<const Sample> train, const HyperParams& hp,
                             const std::optional<Proximal>& prox = std::nullopt);

/// Ids of the k largest logits, descending; ties go to the smaller id.
std::vector<LocationId> topk_from_logits(std::span<const double> logits, std::size_t k);
std::vector<LocationId> predict_topk(const ModelWeights& w, std::span<const LocationId> window,
                                     std::size_t k);

/// Binary checkpoint: "FGCK", u32 version, u64 |L|, E, H, Z, then each layer
/// as little-endian float64.
void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_checkpoint(const std::filesystem::path& path);

}  // namespace fedgeo

#endif  // FEDGEO_MODEL_HPP
