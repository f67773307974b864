#pragma once

#include "swindle/rng.hpp"
#include "swindle/targets.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace swindle {

struct Standardization {
  Vector mean;
  Vector stddev;  // constant columns keep stddev 1
};

// Features are stored raw; design_matrix() applies the standardization and
// appends a bias column of ones.
struct TabularDataset {
  Matrix features;  // N x d, raw
  Vector labels;    // N, values in {0, 1}
  std::vector<std::string> feature_names;
  Standardization standardization;

  Eigen::Index size() const { return features.rows(); }
  Matrix standardized_features() const;
  Matrix design_matrix() const;  // N x (d + 1)
};

Standardization compute_standardization(const Matrix& features);

// Whitespace-separated integers, 24 feature columns then a label in {1, 2}
// (1 = good -> 0, 2 = bad -> 1). Standardization comes from the whole file.
TabularDataset load_german_credit(const std::string& path);
TabularDataset parse_german_credit(std::istream& in);

struct ResponseDataset {
  std::vector<Response> responses;
  int students = 0;
  int questions = 0;
};

// CSV of "student,question,correct" with 0-based dense indices; a header
// line is skipped when its first field is not numeric.
ResponseDataset load_irt(const std::string& path);
ResponseDataset parse_irt(std::istream& in);

// Disjoint, exhaustive and deterministic in `seed`. The test part holds
// round(N * test_fraction) rows; both parts carry the training standardization.
std::pair<TabularDataset, TabularDataset> train_test_split(const TabularDataset& data,
                                                           double test_fraction,
                                                           std::uint64_t seed);

enum class SynthKind { logistic, sparse, irt };

struct SynthParams {
  int rows = 200;             // logistic / sparse
  int covariates = 5;         // logistic / sparse, bias excluded
  double weight_scale = 1.0;  // logistic: w ~ N(0, scale^2); 0 gives w = 0
  int students = 20;          // irt
  int questions = 10;         // irt
  double response_fraction = 1.0;  // irt: share of the full grid observed
};

struct SynthDataset {
  SynthKind kind = SynthKind::logistic;
  TabularDataset tabular;     // logistic / sparse
  ResponseDataset responses;  // irt
  Vector true_parameters;     // in the target's unconstrained layout
};

// Draws data from the corresponding generative model. Logistic and sparse
// features are standard normal; the recorded parameters index the
// standardized design with bias.
SynthDataset synth_dataset(SynthKind kind, const SynthParams& params, std::uint64_t seed);

// CSV of the standardized design (with bias) plus label, and a JSON sidecar
// with the standardization. read_standardized_csv reverses write.
void write_standardized(const TabularDataset& data, const std::string& csv_path,
                        const std::string& json_path);
std::pair<Matrix, Vector> read_standardized_csv(const std::string& csv_path);

}  // namespace swindle
