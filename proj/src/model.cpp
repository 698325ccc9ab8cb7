#include "contilearn/model.hpp"

#include <cmath>

namespace contilearn {

namespace {

Tensor glorot_uniform(int64_t fan_in, int64_t fan_out, std::vector<int64_t> shape, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

std::string layer_name(int i, const char* field) {
  return "fe.l" + std::to_string(i) + "." + field;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim <= 0 || feature_dim <= 0 || num_groups <= 0 || classes_per_task <= 0)
    throw ConfigError("model: all dimensions must be positive");
  for (int h : hidden_dims) {
    if (h <= 0) throw ConfigError("model: hidden dims must be positive");
    if (h % num_groups != 0) throw ConfigError("model: hidden dims must be divisible by num_groups");
  }
  if (group_norm_eps <= 0.0) throw ConfigError("model: group_norm_eps must be positive");
}

int64_t ModelConfig::extractor_parameter_count() const {
  int64_t n = 0;
  int64_t prev = input_dim;
  for (int h : hidden_dims) {
    n += prev * h + h;  // dense
    n += 2 * h;         // gamma, beta
    prev = h;
  }
  n += prev * feature_dim + feature_dim;
  return n;
}

FeatureExtractor FeatureExtractor::init(const ModelConfig& config) {
  config.validate();
  FeatureExtractor fe;
  fe.config_ = config;
  Rng rng = Rng(config.init_seed).substream("model-init");
  int64_t prev = config.input_dim;
  for (size_t i = 0; i < config.hidden_dims.size(); ++i) {
    const int64_t h = config.hidden_dims[i];
    fe.params_.add(layer_name(static_cast<int>(i), "w"), glorot_uniform(prev, h, {prev, h}, rng));
    fe.params_.add(layer_name(static_cast<int>(i), "b"), Tensor::zeros({h}, true));
    fe.params_.add(layer_name(static_cast<int>(i), "gamma"), Tensor::full({h}, 1.0, true));
    fe.params_.add(layer_name(static_cast<int>(i), "beta"), Tensor::zeros({h}, true));
    prev = h;
  }
  fe.params_.add("fe.out.w", glorot_uniform(prev, config.feature_dim, {prev, config.feature_dim}, rng));
  fe.params_.add("fe.out.b", Tensor::zeros({config.feature_dim}, true));
  return fe;
}

FeatureExtractor FeatureExtractor::from_store(const ModelConfig& config, const ParameterStore& store) {
  config.validate();
  FeatureExtractor fe;
  fe.config_ = config;
  for (size_t i = 0; i < config.hidden_dims.size(); ++i) {
    for (const char* field : {"w", "b", "gamma", "beta"}) {
      const std::string name = layer_name(static_cast<int>(i), field);
      fe.params_.add(name, store.get(name).clone());
    }
  }
  fe.params_.add("fe.out.w", store.get("fe.out.w").clone());
  fe.params_.add("fe.out.b", store.get("fe.out.b").clone());
  fe.set_requires_grad(true);
  return fe;
}

Tensor FeatureExtractor::features(Tape* tape, const Tensor& x) const {
  if (x.ndim() != 2 || x.dim(1) != config_.input_dim)
    throw DimensionError("features: input shape does not match input_dim");
  Tensor h = x;
  for (size_t i = 0; i < config_.hidden_dims.size(); ++i) {
    const auto& w = params_.get(layer_name(static_cast<int>(i), "w"));
    const auto& b = params_.get(layer_name(static_cast<int>(i), "b"));
    const auto& gamma = params_.get(layer_name(static_cast<int>(i), "gamma"));
    const auto& beta = params_.get(layer_name(static_cast<int>(i), "beta"));
    h = add_bias(tape, matmul(tape, h, w), b);
    h = group_norm(tape, h, config_.num_groups, gamma, beta, config_.group_norm_eps);
    h = relu(tape, h);
  }
  return add_bias(tape, matmul(tape, h, params_.get("fe.out.w")), params_.get("fe.out.b"));
}

void FeatureExtractor::set_requires_grad(bool v) {
  for (const auto& [name, t] : params_.items()) {
    Tensor handle = t;  // shares the node
    handle.set_requires_grad(v);
  }
}

FeatureExtractor FeatureExtractor::clone() const {
  FeatureExtractor fe;
  fe.config_ = config_;
  for (const auto& [name, t] : params_.items()) fe.params_.add(name, t.clone());
  return fe;
}

Head Head::init(int task_id, int feature_dim, int classes, Rng rng) {
  Head h;
  h.task_id = task_id;
  Rng stream = rng.substream("head-init", static_cast<uint64_t>(task_id));
  h.weights = glorot_uniform(feature_dim, classes, {feature_dim, classes}, stream);
  h.bias = Tensor::zeros({classes}, true);
  return h;
}

void Head::set_requires_grad(bool v) {
  weights.set_requires_grad(v);
  bias.set_requires_grad(v);
}

Head Head::clone() const {
  Head h;
  h.task_id = task_id;
  h.weights = weights.clone();
  h.bias = bias.clone();
  return h;
}

void HeadRegistry::add(Head head) {
  if (contains(head.task_id)) throw UsageError("head already registered for task");
  heads_.emplace(head.task_id, std::move(head));
}

Head& HeadRegistry::get(int task_id) {
  auto it = heads_.find(task_id);
  if (it == heads_.end()) throw UsageError("no head registered for task " + std::to_string(task_id));
  return it->second;
}

const Head& HeadRegistry::get(int task_id) const {
  auto it = heads_.find(task_id);
  if (it == heads_.end()) throw UsageError("no head registered for task " + std::to_string(task_id));
  return it->second;
}

HeadRegistry HeadRegistry::clone() const {
  HeadRegistry r;
  for (const auto& [tid, h] : heads_) r.add(h.clone());
  return r;
}

Tensor predict(Tape* tape, const FeatureExtractor& fe, const Head& head, const Tensor& x) {
  return add_bias(tape, matmul(tape, fe.features(tape, x), head.weights), head.bias);
}

std::vector<int> predict_classes(const FeatureExtractor& fe, const Head& head, const Tensor& x) {
  Tensor logits = predict(nullptr, fe, head, x);
  const int64_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    int best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (logits.at(r, j) > logits.at(r, best)) best = static_cast<int>(j);
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

Checkpoint Checkpoint::capture(const FeatureExtractor& fe, const HeadRegistry& heads,
                               const std::string& method, int task_index, uint64_t seed) {
  Checkpoint c;
  c.model = fe.config();
  c.method = method;
  c.task_index = task_index;
  c.seed = seed;
  for (const auto& [name, t] : fe.params().items()) c.params.add(name, t.clone());
  for (const auto& [tid, head] : heads.all()) {
    c.params.add("head.t" + std::to_string(tid) + ".w", head.weights.clone());
    c.params.add("head.t" + std::to_string(tid) + ".b", head.bias.clone());
  }
  return c;
}

FeatureExtractor Checkpoint::extractor() const { return FeatureExtractor::from_store(model, params); }

HeadRegistry Checkpoint::heads() const {
  HeadRegistry reg;
  for (const auto& [name, t] : params.items()) {
    if (name.rfind("head.t", 0) != 0) continue;
    const size_t dot = name.find('.', 6);
    if (dot == std::string::npos) throw CorruptFileError("malformed head parameter name: " + name);
    const int tid = std::stoi(name.substr(6, dot - 6));
    const std::string field = name.substr(dot + 1);
    if (field == "w") {
      Head h;
      h.task_id = tid;
      h.weights = t.clone();
      h.weights.set_requires_grad(true);
      h.bias = params.get("head.t" + std::to_string(tid) + ".b").clone();
      h.bias.set_requires_grad(true);
      reg.add(std::move(h));
    }
  }
  return reg;
}

}  // namespace contilearn
