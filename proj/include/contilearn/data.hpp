#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "contilearn/rng.hpp"
#include "contilearn/tensor.hpp"

namespace contilearn {

// Inputs are one example per row; labels are global class ids.
struct LabeledDataset {
  Tensor inputs;            // [n x d]
  std::vector<int> labels;  // n entries
  std::vector<int> class_set;  // sorted global class ids present

  int64_t size() const { return inputs.defined() ? inputs.dim(0) : 0; }
  void validate() const;
};

// One task of the continuum: train/few-shot/test splits over a disjoint slice
// of the global class set. Few-shot is carved from train, with the source row
// indices recorded.
struct Task {
  int task_id = 0;
  LabeledDataset train;
  LabeledDataset fewshot;
  LabeledDataset test;
  std::vector<int64_t> fewshot_indices;  // rows of train that form fewshot
  std::vector<int> class_set;            // sorted global ids; local label = index

  int num_classes() const { return static_cast<int>(class_set.size()); }
  int local_label(int global_label) const;
  std::vector<int> local_labels(const LabeledDataset& d) const;
};

struct TaskStream {
  std::vector<Task> tasks;
  int num_tasks() const { return static_cast<int>(tasks.size()); }
};

struct SyntheticSpec {
  int num_classes = 10;
  int classes_per_task = 2;
  int input_dim = 64;
  int train_per_class = 500;
  int test_per_class = 200;
  double cluster_separation = 2.0;
  double noise_sigma = 1.0;
  uint64_t seed = 7;

  void validate() const;
};

// Partition classes into T consecutive groups in sorted id order (or a seeded
// shuffle of it) and filter both splits accordingly. Few-shot splits start
// empty; apply_fewshot fills them.
TaskStream make_split_stream(const LabeledDataset& train, const LabeledDataset& test, int num_tasks,
                             uint64_t seed = 0, bool shuffle_classes = false);

// Gaussian blobs: one isotropic cluster per class, mean uniform on the sphere
// of radius cluster_separation, train and test drawn independently.
TaskStream make_synthetic_stream(const SyntheticSpec& spec);
LabeledDataset make_synthetic_dataset(const SyntheticSpec& spec, int per_class, Rng rng);

// Stratified subsample: ceil(fraction * n_c) examples per class, without
// replacement. Returns the dataset and the selected row indices (ascending).
std::pair<LabeledDataset, std::vector<int64_t>> fewshot_subsample(const LabeledDataset& train,
                                                                  double fraction, uint64_t seed);

void apply_fewshot(TaskStream& stream, double fraction, uint64_t seed);

// IDX files, big-endian: magic 0x00000803 for 3-d uint8 images (flattened to
// rows and scaled to [0,1]) and 0x00000801 for labels.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

Tensor gather_rows(const Tensor& inputs, const std::vector<int64_t>& rows);

template <typename T>
std::vector<T> gather(const std::vector<T>& values, const std::vector<int64_t>& rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (int64_t r : rows) out.push_back(values[static_cast<size_t>(r)]);
  return out;
}

}  // namespace contilearn
