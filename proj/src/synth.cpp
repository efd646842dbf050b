#include "kd3a/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kd3a/rng.hpp"

namespace kd3a {

namespace {

void validate_spec(const DomainSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("DomainSpec: need at least 2 classes");
  if (spec.input_dim < 1) throw std::invalid_argument("DomainSpec: need input_dim >= 1");
  if (spec.sample_count < spec.num_classes)
    throw std::invalid_argument("DomainSpec: need sample_count >= num_classes");
  if (!(spec.cov_scale > 0.0)) throw std::invalid_argument("DomainSpec: cov_scale must be > 0");
  if (static_cast<int>(spec.class_means.size()) != spec.num_classes)
    throw std::invalid_argument("DomainSpec: one mean vector per class required");
  for (const auto& m : spec.class_means)
    if (static_cast<int>(m.size()) != spec.input_dim)
      throw std::invalid_argument("DomainSpec: mean dimension mismatch");
  if (!spec.translation.empty() &&
      static_cast<int>(spec.translation.size()) != spec.input_dim)
    throw std::invalid_argument("DomainSpec: translation dimension mismatch");
}

double geometry_radius(const DomainSpec& spec) {
  double r2 = 0.0;
  for (const auto& m : spec.class_means) {
    double n = std::inner_product(m.begin(), m.end(), m.begin(), 0.0);
    r2 = std::max(r2, n);
  }
  return r2 > 0.0 ? std::sqrt(r2) : 1.0;
}

}  // namespace

double hidden_label_accuracy(const UnlabeledDataset& target, const std::vector<int>& predictions) {
  if (predictions.size() != target.hidden_labels_.size() || predictions.empty())
    throw std::invalid_argument("hidden_label_accuracy: prediction count mismatch");
  int hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == target.hidden_labels_[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::vector<int> hidden_labels_for_evaluation(const UnlabeledDataset& target) {
  return target.hidden_labels_;
}

std::vector<std::vector<double>> make_class_geometry(int num_classes, int input_dim,
                                                     double radius, uint64_t seed) {
  if (num_classes < 2 || input_dim < 2)
    throw std::invalid_argument("make_class_geometry: need C >= 2 and d >= 2");
  if (!(radius > 0.0)) throw std::invalid_argument("make_class_geometry: radius must be > 0");

  // Means sit at equal angles in the (0,1) plane — the plane the domain shift
  // rotates in — with a small seeded component in the remaining coordinates.
  Rng rng(seed);
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(input_dim, 0.0));
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * 3.14159265358979323846 * c / num_classes;
    means[c][0] = std::cos(angle);
    means[c][1] = std::sin(angle);
    for (int j = 2; j < input_dim; ++j) means[c][j] = 0.15 * rng.normal();
    double norm = std::sqrt(
        std::inner_product(means[c].begin(), means[c].end(), means[c].begin(), 0.0));
    for (double& v : means[c]) v *= radius / norm;
  }
  return means;
}

LabeledDataset generate_domain(const DomainSpec& spec) {
  validate_spec(spec);

  // Shifted class means: rotate the geometry in the (0,1) plane, then translate.
  const double c = std::cos(spec.rotation_angle);
  const double s = std::sin(spec.rotation_angle);
  std::vector<std::vector<double>> means = spec.class_means;
  for (auto& m : means) {
    const double m0 = m[0], m1 = m[1];
    if (spec.input_dim >= 2) {
      m[0] = c * m0 - s * m1;
      m[1] = s * m0 + c * m1;
    }
    if (!spec.translation.empty())
      for (int j = 0; j < spec.input_dim; ++j) m[j] += spec.translation[j];
  }

  LabeledDataset out;
  out.num_classes = spec.num_classes;
  out.inputs = Matrix(spec.sample_count, spec.input_dim);
  out.labels.resize(spec.sample_count);
  Rng rng(spec.seed);
  const double noise_std = std::sqrt(spec.cov_scale);
  for (int i = 0; i < spec.sample_count; ++i) {
    const int label = i % spec.num_classes;
    out.labels[i] = label;
    double* row = out.inputs.row(i);
    for (int j = 0; j < spec.input_dim; ++j) row[j] = means[label][j] + noise_std * rng.normal();
  }
  return out;
}

UnlabeledDataset as_target(LabeledDataset dataset) {
  return UnlabeledDataset(std::move(dataset));
}

LabeledDataset corrupt_labels(const LabeledDataset& dataset, double fraction, uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("corrupt_labels: fraction outside [0,1]");
  if (dataset.num_classes < 2) throw std::invalid_argument("corrupt_labels: need C >= 2");

  const int n = dataset.size();
  const int flips = static_cast<int>(std::llround(fraction * n));
  LabeledDataset out = dataset;
  if (flips == 0) return out;

  // Partial Fisher-Yates: the first `flips` entries are a uniform sample of
  // distinct indices; each picked label moves to a uniformly random other class.
  Rng rng(seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < flips; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(order[i], order[j]);
    const int idx = order[i];
    const int old = out.labels[idx];
    out.labels[idx] = (old + 1 + rng.uniform_int(dataset.num_classes - 1)) % dataset.num_classes;
  }
  return out;
}

LabeledDataset make_irrelevant_domain(const DomainSpec& spec, uint64_t seed) {
  validate_spec(spec);
  Rng rng(seed);

  // Uniform box displaced well outside the class geometry; labels carry no
  // information about the inputs.
  const double radius = geometry_radius(spec);
  std::vector<double> offset(spec.input_dim);
  const double shift = 3.0 * radius / std::sqrt(static_cast<double>(spec.input_dim));
  for (auto& o : offset) o = (rng.uniform() < 0.5 ? -shift : shift);

  LabeledDataset out;
  out.num_classes = spec.num_classes;
  out.inputs = Matrix(spec.sample_count, spec.input_dim);
  out.labels.resize(spec.sample_count);
  for (int i = 0; i < spec.sample_count; ++i) {
    double* row = out.inputs.row(i);
    for (int j = 0; j < spec.input_dim; ++j) row[j] = offset[j] + rng.uniform(-radius, radius);
    out.labels[i] = rng.uniform_int(spec.num_classes);
  }
  return out;
}

namespace {

void write_csv(const std::string& path, const Matrix& inputs, const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_csv: cannot open " + path);
  for (int j = 0; j < inputs.cols; ++j) out << "x_" << j << ",";
  out << "label\n";
  char buf[64];
  for (int r = 0; r < inputs.rows; ++r) {
    const double* row = inputs.row(r);
    for (int j = 0; j < inputs.cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", row[j]);
      out << buf << ",";
    }
    out << labels[r] << "\n";
  }
  if (!out) throw std::runtime_error("dump_csv: write failed for " + path);
}

}  // namespace

void dump_csv(const std::string& path, const LabeledDataset& dataset) {
  write_csv(path, dataset.inputs, dataset.labels);
}

void dump_csv(const std::string& path, const UnlabeledDataset& dataset) {
  write_csv(path, dataset.inputs(), std::vector<int>(dataset.size(), -1));
}

LabeledDataset load_csv(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);

  int dim = 0;
  for (char ch : line)
    if (ch == ',') ++dim;  // d feature columns + label column

  std::vector<double> values;
  std::vector<int> labels;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col < dim) {
        values.push_back(std::stod(cell));
      } else {
        // num_classes == 0 reads an unlabeled dump, where every label is -1.
        const int label = std::stoi(cell);
        const bool ok = num_classes > 0 ? (label >= 0 && label < num_classes) : label == -1;
        if (!ok) throw std::runtime_error("load_csv: label out of range in " + path);
        labels.push_back(label);
      }
      ++col;
    }
    if (col != dim + 1) throw std::runtime_error("load_csv: ragged row in " + path);
    ++rows;
  }
  if (rows == 0) throw std::runtime_error("load_csv: no data rows in " + path);

  LabeledDataset out;
  out.num_classes = num_classes;
  out.inputs = Matrix(rows, dim);
  out.inputs.data = std::move(values);
  out.labels = std::move(labels);
  return out;
}

}  // namespace kd3a
