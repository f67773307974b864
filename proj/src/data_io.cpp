#include "swindle/data_io.hpp"

#include "swindle/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace swindle {
namespace {

constexpr int kGermanCreditFeatures = 24;

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::schema, "cannot open dataset '" + path + "'");
  return in;
}

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto a = field.find_first_not_of(" \t\r");
    const auto b = field.find_last_not_of(" \t\r");
    fields.push_back(a == std::string::npos ? "" : field.substr(a, b - a + 1));
  }
  return fields;
}

bool parse_int(const std::string& s, long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtol(s.c_str(), &end, 10);
  return end != nullptr && *end == '\0';
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Standardization compute_standardization(const Matrix& features) {
  const auto n = features.rows();
  if (n < 1) throw DataError(DataError::Kind::schema, "cannot standardize an empty dataset");
  Standardization s;
  s.mean = features.colwise().mean().transpose();
  s.stddev.resize(features.cols());
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const double var =
        n > 1 ? (features.col(j).array() - s.mean[j]).square().sum() / static_cast<double>(n - 1)
              : 0.0;
    s.stddev[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Matrix TabularDataset::standardized_features() const {
  if (standardization.mean.size() != features.cols()) {
    throw ContractError("dataset: standardization does not match the feature count");
  }
  Matrix out = features.rowwise() - standardization.mean.transpose();
  out.array().rowwise() /= standardization.stddev.transpose().array();
  return out;
}

Matrix TabularDataset::design_matrix() const {
  Matrix out(features.rows(), features.cols() + 1);
  out.leftCols(features.cols()) = standardized_features();
  out.col(features.cols()).setOnes();
  return out;
}

TabularDataset parse_german_credit(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    std::istringstream ss(line);
    std::vector<double> values;
    std::string token;
    while (ss >> token) {
      long v;
      if (!parse_int(token, v)) {
        throw DataError(DataError::Kind::parse, "non-integer field '" + token + "'", line_no);
      }
      values.push_back(static_cast<double>(v));
    }
    if (values.size() != kGermanCreditFeatures + 1) {
      throw DataError(DataError::Kind::schema,
                      "expected 25 columns, found " + std::to_string(values.size()), line_no);
    }
    const double label = values.back();
    if (label != 1.0 && label != 2.0) {
      throw DataError(DataError::Kind::schema, "label must be 1 (good) or 2 (bad)", line_no);
    }
    labels.push_back(label == 2.0 ? 1.0 : 0.0);
    values.pop_back();
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError(DataError::Kind::schema, "german credit file has no rows");

  TabularDataset data;
  data.features.resize(static_cast<Eigen::Index>(rows.size()), kGermanCreditFeatures);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < kGermanCreditFeatures; ++j) {
      data.features(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    }
  }
  data.labels = Eigen::Map<Vector>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  for (int j = 0; j < kGermanCreditFeatures; ++j) {
    data.feature_names.push_back("a" + std::to_string(j + 1));
  }
  data.standardization = compute_standardization(data.features);
  return data;
}

TabularDataset load_german_credit(const std::string& path) {
  auto in = open_input(path);
  return parse_german_credit(in);
}

ResponseDataset parse_irt(std::istream& in) {
  ResponseDataset data;
  std::set<std::pair<int, int>> seen;
  std::set<int> students, questions;
  std::string line;
  long line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto fields = split_csv(line);
    long s, q, y;
    const bool numeric = fields.size() == 3 && parse_int(fields[0], s);
    if (first_content && !fields.empty() && !parse_int(fields[0], s)) {
      first_content = false;  // header
      continue;
    }
    first_content = false;
    if (fields.size() != 3) {
      throw DataError(DataError::Kind::schema, "expected 3 fields", line_no);
    }
    if (!numeric || !parse_int(fields[1], q) || !parse_int(fields[2], y)) {
      throw DataError(DataError::Kind::parse, "fields must be integers", line_no);
    }
    if (s < 0 || q < 0) throw DataError(DataError::Kind::schema, "negative index", line_no);
    if (y != 0 && y != 1) throw DataError(DataError::Kind::schema, "outcome must be 0 or 1", line_no);
    if (!seen.insert({static_cast<int>(s), static_cast<int>(q)}).second) {
      throw DataError(DataError::Kind::schema, "duplicate (student, question) pair", line_no);
    }
    students.insert(static_cast<int>(s));
    questions.insert(static_cast<int>(q));
    data.responses.push_back({static_cast<int>(s), static_cast<int>(q), static_cast<int>(y)});
  }
  if (data.responses.empty()) throw DataError(DataError::Kind::schema, "no responses");
  data.students = *students.rbegin() + 1;
  data.questions = *questions.rbegin() + 1;
  if (static_cast<int>(students.size()) != data.students ||
      static_cast<int>(questions.size()) != data.questions) {
    throw DataError(DataError::Kind::schema, "student and question indices must be dense from 0");
  }
  return data;
}

ResponseDataset load_irt(const std::string& path) {
  auto in = open_input(path);
  return parse_irt(in);
}

std::pair<TabularDataset, TabularDataset> train_test_split(const TabularDataset& data,
                                                           double test_fraction,
                                                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ContractError("train_test_split: fraction must lie in (0, 1)");
  }
  const auto n = data.size();
  const auto n_test = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * test_fraction));
  if (n_test < 1 || n_test >= n) {
    throw ContractError("train_test_split: fraction leaves an empty part");
  }
  // Fisher-Yates on the counter-based generator.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  CounterRng rng(seed, 0, StreamTag::general);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  std::vector<Eigen::Index> test_idx(order.begin(), order.begin() + n_test);
  std::vector<Eigen::Index> train_idx(order.begin() + n_test, order.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  auto take = [&](const std::vector<Eigen::Index>& idx) {
    TabularDataset part;
    part.features.resize(static_cast<Eigen::Index>(idx.size()), data.features.cols());
    part.labels.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      part.features.row(static_cast<Eigen::Index>(i)) = data.features.row(idx[i]);
      part.labels[static_cast<Eigen::Index>(i)] = data.labels[idx[i]];
    }
    part.feature_names = data.feature_names;
    return part;
  };
  TabularDataset train = take(train_idx);
  TabularDataset test = take(test_idx);
  train.standardization = compute_standardization(train.features);
  test.standardization = train.standardization;
  return {std::move(train), std::move(test)};
}

SynthDataset synth_dataset(SynthKind kind, const SynthParams& params, std::uint64_t seed) {
  CounterRng rng(seed, 1, StreamTag::general);
  SynthDataset out;
  out.kind = kind;
  if (kind == SynthKind::irt) {
    if (params.students < 1 || params.questions < 1 || !(params.response_fraction > 0.0) ||
        params.response_fraction > 1.0) {
      throw ContractError("synth irt: sizes must be positive and fraction in (0, 1]");
    }
    const int s = params.students, j = params.questions;
    Vector truth(s + j + 1);
    for (int i = 0; i < s + j; ++i) truth[i] = rng.normal();
    truth[s + j] = ItemResponseDensity::kDeltaPriorMean + rng.normal();
    for (int a = 0; a < s; ++a) {
      for (int b = 0; b < j; ++b) {
        // Every student and question keeps at least one response so indices stay dense.
        const bool forced = (a % j) == b || (b % s) == a;
        if (!forced && params.response_fraction < 1.0 && rng.uniform() >= params.response_fraction) {
          continue;
        }
        const double p = sigmoid(truth[a] - truth[s + b] + truth[s + j]);
        out.responses.responses.push_back({a, b, rng.bernoulli(p) ? 1 : 0});
      }
    }
    out.responses.students = s;
    out.responses.questions = j;
    out.true_parameters = truth;
    return out;
  }

  if (params.rows < 1 || params.covariates < 1) {
    throw ContractError("synth tabular: rows and covariates must be positive");
  }
  if (params.weight_scale < 0.0) throw ContractError("synth tabular: weight scale must be >= 0");
  TabularDataset& data = out.tabular;
  data.features.resize(params.rows, params.covariates);
  for (int i = 0; i < params.rows; ++i)
    for (int c = 0; c < params.covariates; ++c) data.features(i, c) = rng.normal();
  for (int c = 0; c < params.covariates; ++c) data.feature_names.push_back("x" + std::to_string(c + 1));
  data.standardization = compute_standardization(data.features);
  const Matrix design = data.design_matrix();
  const auto d = design.cols();

  Vector effective(d);
  if (kind == SynthKind::logistic) {
    for (Eigen::Index c = 0; c < d; ++c) effective[c] = params.weight_scale * rng.normal();
    out.true_parameters = effective;
  } else {
    const double tau = rng.gamma(0.5, 0.5);
    Vector lambda(d), w(d);
    for (Eigen::Index c = 0; c < d; ++c) lambda[c] = rng.gamma(0.5, 0.5);
    for (Eigen::Index c = 0; c < d; ++c) w[c] = rng.normal();
    effective = tau * w.cwiseProduct(lambda);
    out.true_parameters.resize(2 * d + 1);
    out.true_parameters[0] = std::log(tau);
    out.true_parameters.segment(1, d) = lambda.array().log().matrix();
    out.true_parameters.tail(d) = w;
  }
  const Vector logits = design * effective;
  data.labels.resize(params.rows);
  for (int i = 0; i < params.rows; ++i) data.labels[i] = rng.bernoulli(sigmoid(logits[i])) ? 1.0 : 0.0;
  return out;
}

void write_standardized(const TabularDataset& data, const std::string& csv_path,
                        const std::string& json_path) {
  const Matrix design = data.design_matrix();
  std::ofstream csv(csv_path);
  if (!csv) throw DataError(DataError::Kind::schema, "cannot write '" + csv_path + "'");
  for (const auto& name : data.feature_names) csv << name << ',';
  csv << "bias,label\n";
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    for (Eigen::Index j = 0; j < design.cols(); ++j) csv << format_double(design(i, j)) << ',';
    csv << static_cast<int>(data.labels[i]) << '\n';
  }
  nlohmann::json doc;
  doc["feature_names"] = data.feature_names;
  doc["mean"] = std::vector<double>(data.standardization.mean.data(),
                                    data.standardization.mean.data() + data.standardization.mean.size());
  doc["stddev"] = std::vector<double>(
      data.standardization.stddev.data(),
      data.standardization.stddev.data() + data.standardization.stddev.size());
  std::ofstream js(json_path);
  if (!js) throw DataError(DataError::Kind::schema, "cannot write '" + json_path + "'");
  js << doc.dump(2) << '\n';
}

std::pair<Matrix, Vector> read_standardized_csv(const std::string& csv_path) {
  auto in = open_input(csv_path);
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line)) throw DataError(DataError::Kind::schema, "empty csv");
  const auto width = split_csv(line).size();
  if (width < 2) throw DataError(DataError::Kind::schema, "csv needs a label column", 1);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto fields = split_csv(line);
    if (fields.size() != width) throw DataError(DataError::Kind::schema, "ragged row", line_no);
    std::vector<double> values;
    for (const auto& f : fields) {
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (f.empty() || *end != '\0') throw DataError(DataError::Kind::parse, "bad number", line_no);
      values.push_back(v);
    }
    rows.push_back(std::move(values));
  }
  Matrix design(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  Vector labels(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j + 1 < width; ++j) {
      design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    labels[static_cast<Eigen::Index>(i)] = rows[i].back();
  }
  return {design, labels};
}

}  // namespace swindle
