#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kd3a/matrix.hpp"

namespace kd3a {

// Labeled examples; inputs are N x d, labels in [0, C).
struct LabeledDataset {
  Matrix inputs;
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return inputs.rows; }
  int dim() const { return inputs.cols; }
};

// Target-domain view: inputs only. The original labels are retained for
// evaluation but are not reachable through this interface; training code
// that receives an UnlabeledDataset can read nothing but the inputs.
class UnlabeledDataset {
 public:
  UnlabeledDataset() = default;
  explicit UnlabeledDataset(LabeledDataset source)
      : inputs_(std::move(source.inputs)),
        hidden_labels_(std::move(source.labels)),
        num_classes_(source.num_classes) {}

  const Matrix& inputs() const { return inputs_; }
  int size() const { return inputs_.rows; }
  int dim() const { return inputs_.cols; }
  int num_classes() const { return num_classes_; }

 private:
  Matrix inputs_;
  std::vector<int> hidden_labels_;
  int num_classes_ = 0;

  friend double hidden_label_accuracy(const UnlabeledDataset&, const std::vector<int>&);
  friend std::vector<int> hidden_labels_for_evaluation(const UnlabeledDataset&);
};

// Evaluation-only accessors. Live here so the boundary is visible: nothing in
// the training path calls them.
double hidden_label_accuracy(const UnlabeledDataset& target, const std::vector<int>& predictions);
std::vector<int> hidden_labels_for_evaluation(const UnlabeledDataset& target);

// Class-conditional Gaussian blobs. class_means describe the target geometry;
// a domain is produced by rotating that geometry in the (0,1) coordinate
// plane and translating it.
struct DomainSpec {
  int num_classes = 2;
  int input_dim = 2;
  std::vector<std::vector<double>> class_means;  // C rows of input_dim values
  double cov_scale = 1.0;
  double rotation_angle = 0.0;
  std::vector<double> translation;  // empty means zero
  int sample_count = 0;
  uint64_t seed = 0;
};

// Evenly spread class means on a sphere of the given radius.
std::vector<std::vector<double>> make_class_geometry(int num_classes, int input_dim,
                                                     double radius, uint64_t seed);

LabeledDataset generate_domain(const DomainSpec& spec);
UnlabeledDataset as_target(LabeledDataset dataset);

// Replaces round(fraction * N) labels with a uniformly random different class.
LabeledDataset corrupt_labels(const LabeledDataset& dataset, double fraction, uint64_t seed);

// Class-independent inputs far from the domain-spec geometry, uniform labels.
LabeledDataset make_irrelevant_domain(const DomainSpec& spec, uint64_t seed);

// CSV dump/load: columns x_0..x_{d-1},label. Unlabeled dumps write label -1.
void dump_csv(const std::string& path, const LabeledDataset& dataset);
void dump_csv(const std::string& path, const UnlabeledDataset& dataset);
// num_classes == 0 reads an unlabeled dump (all labels -1).
LabeledDataset load_csv(const std::string& path, int num_classes);

}  // namespace kd3a
