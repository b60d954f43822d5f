#ifndef FEDGEO_METRICS_HPP
#define FEDGEO_METRICS_HPP

#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedgeo/federation.hpp"
#include "fedgeo/mobility.hpp"
#include "fedgeo/model.hpp"

namespace fedgeo {

struct EvalReport {
  std::map<std::size_t, double> acc_at;
  std::size_t n_eval = 0;
  std::map<int, double> per_client_acc;
};

/// Fraction of samples whose target ranks within the top k, for each k.
/// Throws EmptyTestSet.
EvalReport acc_at_k(const ModelWeights& w, std::span<const Sample> test, std::span<const std::size_t> ks);

/// acc_at_k over the union of test splits, with per-client Acc@1.
EvalReport evaluate_dataset(const ModelWeights& w, const FederatedDataset& ds,
                            std::span<const std::size_t> ks);

/// Mean L2 distance between each client model and temp.
double client_drift(std::span<const ClientUpdate> updates, const ModelWeights& temp);

struct SeriesSummary {
  double best = 0.0;
  /// Sample standard deviation of the last min(10, n) values; 0 for n = 1.
  double last_std = 0.0;
};

SeriesSummary summarize_series(std::span<const double> values);

struct Summary {
  std::size_t rounds = 0;
  SeriesSummary acc1;
  SeriesSummary acc5;
};

Summary summarize(std::span<const RoundRecord> records);

/// Mean and sample standard deviation (0 for fewer than two values).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

/// A labelled table of string cells rendered as CSV or aligned text.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
  std::string to_text() const;
};

/// Fixed 4-decimal formatting used in report tables.
std::string format_fixed(double v, int decimals = 4);

}  // namespace fedgeo

#endif  // FEDGEO_METRICS_HPP
