#include "fedgeo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fedgeo/error.hpp"

namespace fedgeo {

namespace {

// Position of the target in the descending, smaller-id-first ordering.
std::size_t target_rank(std::span<const double> logits, std::uint32_t target) {
  const double t = logits[target];
  std::size_t rank = 0;
  for (std::uint32_t l = 0; l < logits.size(); ++l) {
    if (logits[l] > t || (logits[l] == t && l < target)) ++rank;
  }
  return rank;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

EvalReport acc_at_k(const ModelWeights& w, std::span<const Sample> test, std::span<const std::size_t> ks) {
  if (test.empty()) throw EmptyTestSet("evaluation needs a nonempty test set");
  const std::size_t L = w.dims().num_locations;
  for (std::size_t k : ks) {
    if (k < 1 || k > L) throw ConfigError("k = " + std::to_string(k) + " outside 1..|L|");
  }
  std::vector<std::size_t> hits(ks.size(), 0);
  for (const auto& s : test) {
    const auto logits = forward(w, s.window);
    if (s.target.index >= L) throw InvalidLocationId("target id out of range");
    const std::size_t rank = target_rank(logits, s.target.index);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (rank < ks[i]) ++hits[i];
    }
  }
  EvalReport r;
  r.n_eval = test.size();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    r.acc_at[ks[i]] = static_cast<double>(hits[i]) / static_cast<double>(test.size());
  }
  return r;
}

EvalReport evaluate_dataset(const ModelWeights& w, const FederatedDataset& ds,
                            std::span<const std::size_t> ks) {
  const auto test = ds.global_test();
  EvalReport r = acc_at_k(w, test, ks);
  static constexpr std::size_t kTop1[] = {1};
  for (const auto& c : ds.clients) {
    if (c.test().empty()) continue;
    r.per_client_acc[c.client_id] = acc_at_k(w, c.test(), kTop1).acc_at.at(1);
  }
  return r;
}

double client_drift(std::span<const ClientUpdate> updates, const ModelWeights& temp) {
  if (updates.empty()) throw EmptyDataset("client_drift needs at least one update");
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.weights.dims() != temp.dims()) throw ShapeMismatch("client update shape differs from temp");
    double sq = 0.0;
    for (int z = 1; z <= kNumLayers; ++z) {
      const auto a = u.weights.layer(z);
      const auto b = temp.layer(z);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq += d * d;
      }
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(updates.size());
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  // Shifted by the first value so that constant input gives exactly zero.
  const double shift = values[0];
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v - shift;
  const double mean = sum / n;
  out.mean = shift + mean;
  if (values.size() < 2) return out;
  double sq = 0.0;
  for (double v : values) sq += (v - shift - mean) * (v - shift - mean);
  out.std = std::sqrt(sq / (n - 1.0));
  return out;
}

SeriesSummary summarize_series(std::span<const double> values) {
  SeriesSummary s;
  if (values.empty()) return s;
  s.best = *std::max_element(values.begin(), values.end());
  const std::size_t tail = std::min<std::size_t>(10, values.size());
  s.last_std = mean_std(values.subspan(values.size() - tail)).std;
  return s;
}

Summary summarize(std::span<const RoundRecord> records) {
  std::vector<double> a1, a5;
  for (const auto& r : records) {
    a1.push_back(r.acc1);
    a5.push_back(r.acc5);
  }
  return {records.size(), summarize_series(a1), summarize_series(a5)};
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string Table::to_csv() const {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_escape(cells[i]);
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out.str();
}

std::string Table::to_text() const {
  std::vector<std::size_t> width(header.size(), 0);
  auto measure = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size() && i < width.size(); ++i) width[i] = std::max(width[i], cells[i].size());
  };
  measure(header);
  for (const auto& r : rows) measure(r);
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << "  ";
      out << cells[i];
      if (i + 1 < cells.size() && i < width.size()) out << std::string(width[i] - cells[i].size(), ' ');
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  out << std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

}  // namespace fedgeo
