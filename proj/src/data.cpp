#include "contilearn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace contilearn {

void LabeledDataset::validate() const {
  if (!inputs.defined() || inputs.ndim() != 2 || inputs.dim(0) < 1)
    throw DataError("dataset: inputs must be a nonempty matrix");
  if (static_cast<int64_t>(labels.size()) != inputs.dim(0))
    throw DataError("dataset: label count does not match rows");
  if (!std::is_sorted(class_set.begin(), class_set.end()))
    throw DataError("dataset: class_set must be sorted");
  for (int l : labels) {
    if (!std::binary_search(class_set.begin(), class_set.end(), l))
      throw DataError("dataset: label outside class_set");
  }
  check_finite(inputs.data(), "dataset inputs");
}

int Task::local_label(int global_label) const {
  const auto it = std::lower_bound(class_set.begin(), class_set.end(), global_label);
  if (it == class_set.end() || *it != global_label)
    throw DataError("label not in task class set");
  return static_cast<int>(it - class_set.begin());
}

std::vector<int> Task::local_labels(const LabeledDataset& d) const {
  std::vector<int> out;
  out.reserve(d.labels.size());
  for (int l : d.labels) out.push_back(local_label(l));
  return out;
}

void SyntheticSpec::validate() const {
  if (num_classes <= 0 || classes_per_task <= 0 || input_dim <= 0 || train_per_class <= 0 ||
      test_per_class <= 0)
    throw ConfigError("synthetic spec: sizes must be positive");
  if (num_classes % classes_per_task != 0)
    throw ConfigError("synthetic spec: num_classes must be divisible by classes_per_task");
  if (!(cluster_separation > 0.0)) throw ConfigError("synthetic spec: separation must be positive");
  if (noise_sigma < 0.0) throw ConfigError("synthetic spec: noise_sigma must be >= 0");
}

namespace {

LabeledDataset filter_classes(const LabeledDataset& src, const std::vector<int>& classes) {
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < src.size(); ++i) {
    if (std::binary_search(classes.begin(), classes.end(), src.labels[static_cast<size_t>(i)]))
      rows.push_back(i);
  }
  const int64_t d = src.inputs.dim(1);
  LabeledDataset out;
  Tensor inputs = Tensor::zeros({static_cast<int64_t>(rows.size()), d});
  for (size_t r = 0; r < rows.size(); ++r) {
    const double* srow = src.inputs.data().data() + rows[r] * d;
    std::copy(srow, srow + d, inputs.data().data() + static_cast<int64_t>(r) * d);
    out.labels.push_back(src.labels[static_cast<size_t>(rows[r])]);
  }
  out.inputs = std::move(inputs);
  out.class_set = classes;
  return out;
}

}  // namespace

TaskStream make_split_stream(const LabeledDataset& train, const LabeledDataset& test, int num_tasks,
                             uint64_t seed, bool shuffle_classes) {
  train.validate();
  test.validate();
  if (num_tasks < 1) throw ConfigError("split stream: need at least one task");
  std::vector<int> classes = train.class_set;
  if (test.class_set != classes) throw DataError("split stream: train/test class sets differ");
  if (static_cast<int>(classes.size()) % num_tasks != 0)
    throw ConfigError("split stream: class count not divisible by task count");
  if (shuffle_classes) {
    Rng rng = Rng(seed).substream("class-order");
    rng.shuffle(classes);
  }
  const int per_task = static_cast<int>(classes.size()) / num_tasks;
  TaskStream stream;
  for (int t = 0; t < num_tasks; ++t) {
    std::vector<int> task_classes(classes.begin() + t * per_task,
                                  classes.begin() + (t + 1) * per_task);
    std::sort(task_classes.begin(), task_classes.end());
    Task task;
    task.task_id = t;
    task.class_set = task_classes;
    task.train = filter_classes(train, task_classes);
    task.test = filter_classes(test, task_classes);
    if (task.train.size() == 0 || task.test.size() == 0)
      throw DataError("split stream: task " + std::to_string(t) + " has an empty split");
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

LabeledDataset make_synthetic_dataset(const SyntheticSpec& spec, int per_class, Rng rng) {
  // Class means are drawn once from the "means" substream of the spec seed so
  // train and test share the same clusters.
  Rng mean_rng = Rng(spec.seed).substream("means");
  std::vector<std::vector<double>> means;
  for (int c = 0; c < spec.num_classes; ++c) {
    std::vector<double> m(static_cast<size_t>(spec.input_dim));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : m) {
        v = mean_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (auto& v : m) v = v / norm * spec.cluster_separation;
    means.push_back(std::move(m));
  }

  const int64_t n = static_cast<int64_t>(spec.num_classes) * per_class;
  LabeledDataset out;
  Tensor inputs = Tensor::zeros({n, spec.input_dim});
  out.labels.reserve(static_cast<size_t>(n));
  int64_t row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < per_class; ++i, ++row) {
      double* dst = inputs.data().data() + row * spec.input_dim;
      for (int d = 0; d < spec.input_dim; ++d)
        dst[d] = means[static_cast<size_t>(c)][static_cast<size_t>(d)] + spec.noise_sigma * rng.normal();
      out.labels.push_back(c);
    }
  }
  out.inputs = std::move(inputs);
  for (int c = 0; c < spec.num_classes; ++c) out.class_set.push_back(c);
  return out;
}

TaskStream make_synthetic_stream(const SyntheticSpec& spec) {
  spec.validate();
  Rng base(spec.seed);
  LabeledDataset train = make_synthetic_dataset(spec, spec.train_per_class, base.substream("train"));
  LabeledDataset test = make_synthetic_dataset(spec, spec.test_per_class, base.substream("test"));
  return make_split_stream(train, test, spec.num_classes / spec.classes_per_task, spec.seed);
}

std::pair<LabeledDataset, std::vector<int64_t>> fewshot_subsample(const LabeledDataset& train,
                                                                  double fraction, uint64_t seed) {
  train.validate();
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ConfigError("fewshot fraction must be in (0, 1]");

  std::map<int, std::vector<int64_t>> by_class;
  for (int64_t i = 0; i < train.size(); ++i)
    by_class[train.labels[static_cast<size_t>(i)]].push_back(i);

  Rng rng = Rng(seed).substream("fewshot");
  std::vector<int64_t> selected;
  for (int c : train.class_set) {
    const auto it = by_class.find(c);
    if (it == by_class.end() || it->second.empty())
      throw DataError("fewshot: class " + std::to_string(c) + " has no examples");
    const auto& rows = it->second;
    const auto n_c = static_cast<int64_t>(rows.size());
    const auto take = static_cast<int64_t>(std::ceil(fraction * static_cast<double>(n_c)));
    for (int64_t j : rng.sample_without_replacement(n_c, std::min(take, n_c)))
      selected.push_back(rows[static_cast<size_t>(j)]);
  }
  std::sort(selected.begin(), selected.end());

  const int64_t d = train.inputs.dim(1);
  LabeledDataset out;
  Tensor inputs = Tensor::zeros({static_cast<int64_t>(selected.size()), d});
  for (size_t r = 0; r < selected.size(); ++r) {
    const double* srow = train.inputs.data().data() + selected[r] * d;
    std::copy(srow, srow + d, inputs.data().data() + static_cast<int64_t>(r) * d);
    out.labels.push_back(train.labels[static_cast<size_t>(selected[r])]);
  }
  out.inputs = std::move(inputs);
  out.class_set = train.class_set;
  return {std::move(out), std::move(selected)};
}

void apply_fewshot(TaskStream& stream, double fraction, uint64_t seed) {
  for (auto& task : stream.tasks) {
    Rng task_rng = Rng(seed).substream("fewshot-task", static_cast<uint64_t>(task.task_id));
    auto [ds, idx] = fewshot_subsample(task.train, fraction, task_rng.seed());
    task.fewshot = std::move(ds);
    task.fewshot_indices = std::move(idx);
  }
}

Tensor gather_rows(const Tensor& inputs, const std::vector<int64_t>& rows) {
  const int64_t d = inputs.dim(1);
  Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), d});
  for (size_t r = 0; r < rows.size(); ++r) {
    const double* src = inputs.data().data() + rows[r] * d;
    std::copy(src, src + d, out.data().data() + static_cast<int64_t>(r) * d);
  }
  return out;
}

namespace {

uint32_t read_be_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw DataError("idx file truncated: " + path);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgf(images_path, std::ios::binary);
  if (!imgf) throw IoError("cannot open idx images: " + images_path);
  if (read_be_u32(imgf, images_path) != 0x00000803u)
    throw DataError("bad idx magic (want 0x00000803): " + images_path);
  const uint32_t n = read_be_u32(imgf, images_path);
  const uint32_t rows = read_be_u32(imgf, images_path);
  const uint32_t cols = read_be_u32(imgf, images_path);
  const size_t pixels = static_cast<size_t>(n) * rows * cols;
  std::vector<unsigned char> raw(pixels);
  imgf.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
  if (!imgf) throw DataError("idx images truncated: " + images_path);

  std::ifstream labf(labels_path, std::ios::binary);
  if (!labf) throw IoError("cannot open idx labels: " + labels_path);
  if (read_be_u32(labf, labels_path) != 0x00000801u)
    throw DataError("bad idx magic (want 0x00000801): " + labels_path);
  const uint32_t ln = read_be_u32(labf, labels_path);
  if (ln != n) throw DataError("idx image/label counts differ: " + labels_path);
  std::vector<unsigned char> lab(ln);
  labf.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(ln));
  if (!labf) throw DataError("idx labels truncated: " + labels_path);

  LabeledDataset out;
  const int64_t d = static_cast<int64_t>(rows) * cols;
  Tensor inputs = Tensor::zeros({static_cast<int64_t>(n), d});
  for (size_t i = 0; i < pixels; ++i)
    inputs.data()[i] = static_cast<double>(raw[i]) / 255.0;
  out.inputs = std::move(inputs);
  std::set<int> classes;
  for (unsigned char l : lab) {
    out.labels.push_back(static_cast<int>(l));
    classes.insert(static_cast<int>(l));
  }
  out.class_set.assign(classes.begin(), classes.end());
  return out;
}

}  // namespace contilearn
