#include "fedgeo/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

#include "fedgeo/error.hpp"
#include "fedgeo/rng.hpp"

namespace fedgeo {

namespace {

void check_layer(int z) {
  if (z < 1 || z > kNumLayers) {
    throw InvalidLayerIndex("layer index " + std::to_string(z) + " outside 1.." +
                            std::to_string(kNumLayers));
  }
}

void check_window(const ModelWeights& w, std::span<const LocationId> window) {
  if (window.empty()) throw InvalidLocationId("empty input window");
  for (const auto& l : window) {
    if (l.index >= w.dims().num_locations) {
      throw InvalidLocationId("location id " + std::to_string(l.index) + " >= |L| = " +
                              std::to_string(w.dims().num_locations));
    }
  }
}

// Hidden states h_0..h_T (h_0 = 0) and output logits of one forward pass.
struct Trace {
  std::vector<double> hidden;
  std::vector<double> logits;
};

void forward_trace(const ModelWeights& w, std::span<const LocationId> window, Trace& tr) {
  const std::size_t E = w.dims().embed_dim;
  const std::size_t H = w.dims().hidden_dim;
  const std::size_t L = w.dims().num_locations;
  const std::size_t T = window.size();
  const auto enc = w.layer(2);
  const double* wxh = enc.data();
  const double* whh = wxh + E * H;
  const double* bh = whh + H * H;

  tr.hidden.assign((T + 1) * H, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const auto x = w.embedding_row(window[t].index);
    const double* h_prev = tr.hidden.data() + t * H;
    double* h = tr.hidden.data() + (t + 1) * H;
    std::copy(bh, bh + H, h);
    for (std::size_t i = 0; i < E; ++i) {
      const double xi = x[i];
      const double* row = wxh + i * H;
      for (std::size_t j = 0; j < H; ++j) h[j] += xi * row[j];
    }
    for (std::size_t i = 0; i < H; ++i) {
      const double hi = h_prev[i];
      const double* row = whh + i * H;
      for (std::size_t j = 0; j < H; ++j) h[j] += hi * row[j];
    }
    for (std::size_t j = 0; j < H; ++j) h[j] = std::tanh(h[j]);
  }

  const auto out = w.layer(3);
  const double* wout = out.data();
  const double* bout = wout + H * L;
  tr.logits.assign(bout, bout + L);
  const double* h_last = tr.hidden.data() + T * H;
  for (std::size_t j = 0; j < H; ++j) {
    const double hj = h_last[j];
    const double* row = wout + j * L;
    for (std::size_t l = 0; l < L; ++l) tr.logits[l] += hj * row[l];
  }
}

struct Scratch {
  Trace trace;
  std::vector<double> dlogits;
  std::vector<double> dh;
  std::vector<double> dh_prev;
  std::vector<double> da;
};

// Adds scale * d(cross-entropy)/dw of one sample to grad; returns the sample loss.
double accumulate_sample(const ModelWeights& w, const Sample& s, double scale, ModelWeights& grad,
                         Scratch& sc) {
  const std::size_t E = w.dims().embed_dim;
  const std::size_t H = w.dims().hidden_dim;
  const std::size_t L = w.dims().num_locations;
  const std::size_t T = s.window.size();
  check_window(w, s.window);
  if (s.target.index >= L) throw InvalidLocationId("target id " + std::to_string(s.target.index) + " >= |L|");

  forward_trace(w, s.window, sc.trace);
  const auto& logits = sc.trace.logits;
  const double mx = *std::max_element(logits.begin(), logits.end());
  sc.dlogits.resize(L);
  double z = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    sc.dlogits[l] = std::exp(logits[l] - mx);
    z += sc.dlogits[l];
  }
  const double loss = std::log(z) + mx - logits[s.target.index];
  for (std::size_t l = 0; l < L; ++l) sc.dlogits[l] = sc.dlogits[l] / z * scale;
  sc.dlogits[s.target.index] -= scale;

  // Output layer.
  const auto out = w.layer(3);
  const double* wout = out.data();
  auto gout = grad.layer(3);
  double* gwout = gout.data();
  double* gbout = gwout + H * L;
  const double* h_last = sc.trace.hidden.data() + T * H;
  sc.dh.assign(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    const double hj = h_last[j];
    const double* row = wout + j * L;
    double* grow = gwout + j * L;
    double acc = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      grow[l] += hj * sc.dlogits[l];
      acc += row[l] * sc.dlogits[l];
    }
    sc.dh[j] = acc;
  }
  for (std::size_t l = 0; l < L; ++l) gbout[l] += sc.dlogits[l];

  // Recurrent encoder, backwards through time.
  const auto enc = w.layer(2);
  const double* wxh = enc.data();
  const double* whh = wxh + E * H;
  auto genc = grad.layer(2);
  double* gwxh = genc.data();
  double* gwhh = gwxh + E * H;
  double* gbh = gwhh + H * H;
  sc.da.resize(H);
  sc.dh_prev.resize(H);
  for (std::size_t t = T; t-- > 0;) {
    const double* h = sc.trace.hidden.data() + (t + 1) * H;
    const double* h_prev = sc.trace.hidden.data() + t * H;
    for (std::size_t j = 0; j < H; ++j) sc.da[j] = sc.dh[j] * (1.0 - h[j] * h[j]);
    for (std::size_t j = 0; j < H; ++j) gbh[j] += sc.da[j];

    const std::size_t loc = s.window[t].index;
    const auto x = w.embedding_row(loc);
    auto gx = grad.embedding_row(loc);
    for (std::size_t i = 0; i < E; ++i) {
      const double xi = x[i];
      const double* row = wxh + i * H;
      double* grow = gwxh + i * H;
      double acc = 0.0;
      for (std::size_t j = 0; j < H; ++j) {
        grow[j] += xi * sc.da[j];
        acc += row[j] * sc.da[j];
      }
      gx[i] += acc;
    }
    for (std::size_t i = 0; i < H; ++i) {
      const double hi = h_prev[i];
      const double* row = whh + i * H;
      double* grow = gwhh + i * H;
      double acc = 0.0;
      for (std::size_t j = 0; j < H; ++j) {
        grow[j] += hi * sc.da[j];
        acc += row[j] * sc.da[j];
      }
      sc.dh_prev[i] = acc;
    }
    std::swap(sc.dh, sc.dh_prev);
  }
  return loss;
}

// Adds the proximal gradient to grad and returns the proximal loss.
double add_proximal(const ModelWeights& w, const Proximal& prox, ModelWeights& grad) {
  const ModelWeights& anchor = prox.anchor.get();
  if (anchor.dims() != w.dims()) throw ShapeMismatch("proximal anchor shape differs from weights");
  double sq = 0.0;
  for (int z = 1; z <= kNumLayers; ++z) {
    const auto wl = w.layer(z);
    const auto al = anchor.layer(z);
    auto gl = grad.layer(z);
    for (std::size_t i = 0; i < wl.size(); ++i) {
      const double diff = wl[i] - al[i];
      sq += diff * diff;
      gl[i] += prox.mu * diff;
    }
  }
  return 0.5 * prox.mu * sq;
}

void fill_uniform(std::span<double> v, double a, Rng& rng) {
  for (double& x : v) x = rng.uniform(-a, a);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr char kCheckpointMagic[4] = {'F', 'G', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

ModelWeights::ModelWeights(const ModelDims& dims) : dims_(dims) {
  const std::size_t L = dims.num_locations, E = dims.embed_dim, H = dims.hidden_dim;
  layers_[0].assign(L * E, 0.0);
  layers_[1].assign(E * H + H * H + H, 0.0);
  layers_[2].assign(H * L + L, 0.0);
}

std::span<double> ModelWeights::layer(int z) {
  check_layer(z);
  return layers_[static_cast<std::size_t>(z - 1)];
}

std::span<const double> ModelWeights::layer(int z) const {
  check_layer(z);
  return layers_[static_cast<std::size_t>(z - 1)];
}

std::size_t ModelWeights::total_size() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.size();
  return n;
}

bool ModelWeights::all_finite() const {
  for (const auto& l : layers_) {
    for (double x : l) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

std::vector<double> flatten_layer(const ModelWeights& w, int z) {
  const auto l = w.layer(z);
  return {l.begin(), l.end()};
}

void unflatten_layer(ModelWeights& w, int z, std::span<const double> values) {
  auto l = w.layer(z);
  if (values.size() != l.size()) {
    throw ShapeMismatch("layer " + std::to_string(z) + " expects " + std::to_string(l.size()) +
                        " values, got " + std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), l.begin());
}

std::vector<double> flatten_all(const ModelWeights& w) {
  std::vector<double> out;
  out.reserve(w.total_size());
  for (int z = 1; z <= kNumLayers; ++z) {
    const auto l = w.layer(z);
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

void HyperParams::validate() const {
  if (embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
  if (hidden_dim < 1) throw ConfigError("model.hidden_dim must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("model.learning_rate must be a finite value >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("model.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("model.weight_decay must be a finite value >= 0");
  }
  if (batch_size < 1) throw ConfigError("model.batch_size must be >= 1");
  if (local_epochs < 1) throw ConfigError("model.local_epochs must be >= 1");
}

ModelWeights init_weights(std::size_t num_locations, const HyperParams& hp, std::uint64_t seed) {
  const ModelDims dims{num_locations, hp.embed_dim, hp.hidden_dim};
  ModelWeights w(dims);
  Rng rng(mix_seed({seed, 0x1417}));
  const double a_embed = 1.0 / std::sqrt(static_cast<double>(dims.embed_dim));
  const double a_hidden = 1.0 / std::sqrt(static_cast<double>(dims.hidden_dim));
  fill_uniform(w.layer(1), a_embed, rng);
  auto enc = w.layer(2);
  const std::size_t E = dims.embed_dim, H = dims.hidden_dim;
  fill_uniform(enc.subspan(0, E * H), a_embed, rng);
  fill_uniform(enc.subspan(E * H, H * H), a_hidden, rng);
  fill_uniform(w.layer(3).subspan(0, H * num_locations), a_hidden, rng);
  return w;
}

std::vector<double> forward(const ModelWeights& w, std::span<const LocationId> window) {
  check_window(w, window);
  Trace tr;
  forward_trace(w, window, tr);
  return std::move(tr.logits);
}

LossAndGrad loss_and_grad(const ModelWeights& w, std::span<const Sample> batch,
                          const std::optional<Proximal>& prox) {
  if (batch.empty()) throw EmptyDataset("loss_and_grad needs a nonempty batch");
  LossAndGrad out{0.0, ModelWeights(w.dims())};
  Scratch sc;
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& s : batch) total += accumulate_sample(w, s, scale, out.grad, sc);
  out.loss = total * scale;
  if (prox) out.loss += add_proximal(w, *prox, out.grad);
  return out;
}

SgdTrainer::SgdTrainer(ModelWeights start, const HyperParams& hp, std::optional<Proximal> prox)
    : weights_(std::move(start)), velocity_(weights_.dims()), hp_(hp), prox_(std::move(prox)) {
  hp_.validate();
}

void SgdTrainer::step(const ModelWeights& grad) {
  for (int z = 1; z <= kNumLayers; ++z) {
    auto w = weights_.layer(z);
    auto v = velocity_.layer(z);
    const auto g = grad.layer(z);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = hp_.momentum * v[i] + (g[i] + hp_.weight_decay * w[i]);
      w[i] -= hp_.learning_rate * v[i];
    }
  }
}

double SgdTrainer::run_epoch(std::span<const Sample> data) {
  if (data.empty()) throw EmptyDataset("cannot train on an empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed({hp_.seed, epoch_}));
  rng.shuffle(std::span<std::size_t>(order));

  Scratch sc;
  ModelWeights grad(weights_.dims());
  double weighted_loss = 0.0;
  for (std::size_t start = 0; start < order.size(); start += hp_.batch_size) {
    const std::size_t end = std::min(order.size(), start + hp_.batch_size);
    const double scale = 1.0 / static_cast<double>(end - start);
    for (int z = 1; z <= kNumLayers; ++z) std::ranges::fill(grad.layer(z), 0.0);
    double batch_loss = 0.0;
    for (std::size_t b = start; b < end; ++b) {
      batch_loss += accumulate_sample(weights_, data[order[b]], scale, grad, sc);
    }
    batch_loss *= scale;
    if (prox_) batch_loss += add_proximal(weights_, *prox_, grad);
    step(grad);
    weighted_loss += batch_loss * static_cast<double>(end - start);
  }
  ++epoch_;
  return weighted_loss / static_cast<double>(data.size());
}

LocalTrainResult train_local(const ModelWeights& w, std::span<const Sample> train, const HyperParams& hp,
                             const std::optional<Proximal>& prox) {
  if (train.empty()) throw EmptyDataset("client has no training samples");
  SgdTrainer trainer(w, hp, prox);
  double loss = 0.0;
  for (std::size_t e = 0; e < hp.local_epochs; ++e) loss = trainer.run_epoch(train);
  return {std::move(trainer).release(), loss};
}

std::vector<LocationId> topk_from_logits(std::span<const double> logits, std::size_t k) {
  if (k < 1 || k > logits.size()) {
    throw ConfigError("k = " + std::to_string(k) + " outside 1.." + std::to_string(logits.size()));
  }
  std::vector<std::uint32_t> ids(logits.size());
  std::iota(ids.begin(), ids.end(), 0u);
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
  std::vector<LocationId> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = LocationId{ids[i]};
  return out;
}

std::vector<LocationId> predict_topk(const ModelWeights& w, std::span<const LocationId> window,
                                     std::size_t k) {
  return topk_from_logits(forward(w, window), k);
}

void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string());
    out.write(kCheckpointMagic, 4);
    const std::uint32_t v = kCheckpointVersion;
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    write_u64(out, w.dims().num_locations);
    write_u64(out, w.dims().embed_dim);
    write_u64(out, w.dims().hidden_dim);
    write_u64(out, kNumLayers);
    for (int z = 1; z <= kNumLayers; ++z) {
      for (double x : w.layer(z)) write_u64(out, std::bit_cast<std::uint64_t>(x));
    }
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  unsigned char vb[4];
  if (!in.read(reinterpret_cast<char*>(vb), 4)) throw IoError("truncated checkpoint");
  const std::uint32_t version = vb[0] | (vb[1] << 8) | (vb[2] << 16) | (static_cast<std::uint32_t>(vb[3]) << 24);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  ModelDims dims;
  dims.num_locations = read_u64(in);
  dims.embed_dim = read_u64(in);
  dims.hidden_dim = read_u64(in);
  if (read_u64(in) != kNumLayers) throw IoError("checkpoint layer count mismatch");
  ModelWeights w(dims);
  for (int z = 1; z <= kNumLayers; ++z) {
    for (double& x : w.layer(z)) x = std::bit_cast<double>(read_u64(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in checkpoint");
  return w;
}

}  // namespace fedgeo
