#include <cstring>
#include <fstream>
#include <iterator>

#include "contilearn/model.hpp"

// Checkpoint file layout, all integers and floats little-endian:
//   bytes 0-7   magic "CLCKPT01"
//   u32         metadata length, then metadata (model config + provenance,
//               one key=value per line)
//   u32         record count
//   per record: u32 name length, name bytes, u32 ndim, u64 dims...,
//               f64 data (row-major)

namespace contilearn {

namespace {

constexpr char kMagic[8] = {'C', 'L', 'C', 'K', 'P', 'T', '0', '1'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    const uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }

  std::string str(size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > bytes_.size())
      throw CorruptFileError("checkpoint truncated: " + path_);
  }
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

std::string encode_meta(const Checkpoint& c) {
  std::string m;
  m += "input_dim=" + std::to_string(c.model.input_dim) + "\n";
  m += "hidden_dims=";
  for (size_t i = 0; i < c.model.hidden_dims.size(); ++i) {
    if (i) m += ",";
    m += std::to_string(c.model.hidden_dims[i]);
  }
  m += "\n";
  m += "feature_dim=" + std::to_string(c.model.feature_dim) + "\n";
  m += "num_groups=" + std::to_string(c.model.num_groups) + "\n";
  m += "classes_per_task=" + std::to_string(c.model.classes_per_task) + "\n";
  m += "init_seed=" + std::to_string(c.model.init_seed) + "\n";
  m += "method=" + c.method + "\n";
  m += "task_index=" + std::to_string(c.task_index) + "\n";
  m += "seed=" + std::to_string(c.seed) + "\n";
  return m;
}

void decode_meta(const std::string& meta, Checkpoint& c) {
  size_t start = 0;
  while (start < meta.size()) {
    size_t nl = meta.find('\n', start);
    if (nl == std::string::npos) nl = meta.size();
    const std::string line = meta.substr(start, nl - start);
    start = nl + 1;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "input_dim") c.model.input_dim = std::stoi(val);
      else if (key == "hidden_dims") {
        c.model.hidden_dims.clear();
        size_t p = 0;
        while (p < val.size()) {
          size_t comma = val.find(',', p);
          if (comma == std::string::npos) comma = val.size();
          c.model.hidden_dims.push_back(std::stoi(val.substr(p, comma - p)));
          p = comma + 1;
        }
      } else if (key == "feature_dim") c.model.feature_dim = std::stoi(val);
      else if (key == "num_groups") c.model.num_groups = std::stoi(val);
      else if (key == "classes_per_task") c.model.classes_per_task = std::stoi(val);
      else if (key == "init_seed") c.model.init_seed = std::stoull(val);
      else if (key == "method") c.method = val;
      else if (key == "task_index") c.task_index = std::stoi(val);
      else if (key == "seed") c.seed = std::stoull(val);
    } catch (const std::exception&) {
      throw CorruptFileError("checkpoint metadata malformed: " + key + "=" + val);
    }
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  const std::string meta = encode_meta(ckpt);
  put_u32(out, static_cast<uint32_t>(meta.size()));
  out += meta;
  put_u32(out, static_cast<uint32_t>(ckpt.params.items().size()));
  for (const auto& [name, t] : ckpt.params.items()) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
    for (double v : t.data()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic)) throw CorruptFileError("checkpoint truncated: " + path);
  if (std::memcmp(bytes.data(), "CLCKPT", 6) != 0)
    throw CorruptFileError("not a checkpoint file: " + path);
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw VersionMismatchError("unsupported checkpoint version: " + path);

  Reader r(bytes, path);
  r.str(sizeof(kMagic));
  Checkpoint c;
  const uint32_t meta_len = r.u32();
  decode_meta(r.str(meta_len), c);
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const uint32_t ndim = r.u32();
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int64_t>(r.u64()));
      numel *= shape.back();
    }
    std::vector<double> data(static_cast<size_t>(numel));
    for (auto& v : data) v = r.f64();
    c.params.add(name, Tensor::from_data(std::move(shape), std::move(data), true));
  }
  if (!r.done()) throw CorruptFileError("trailing bytes in checkpoint: " + path);
  return c;
}

}  // namespace contilearn
