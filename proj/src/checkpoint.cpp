#include "seqlevel/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seqlevel {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'Q', 'L', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }

  template <typename T>
  void le(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    bytes(b, sizeof(T));
  }

  void str(const std::string& s) {
    le<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw std::runtime_error("checkpoint truncated");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T le() {
    unsigned char b[sizeof(T)];
    bytes(b, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  std::string str() {
    const auto n = le<std::uint64_t>();
    if (n > data_.size() - pos_) throw std::runtime_error("checkpoint truncated");
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

void write_tensors(Writer& w, const Params& p) {
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    const auto tensor = static_cast<Tensor>(t);
    const auto [rows, cols] = p.shape(tensor);
    w.str(std::string(tensor_name(tensor)));
    w.le<std::uint64_t>(rows);
    w.le<std::uint64_t>(cols);
    const auto flat = p.flat().subspan(p.offset(tensor), rows * cols);
    for (double v : flat) w.le(v);
  }
}

void read_tensors(Reader& r, Params& p) {
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    const auto tensor = static_cast<Tensor>(t);
    const std::string name = r.str();
    if (name != tensor_name(tensor))
      throw std::runtime_error("checkpoint tensor " + std::to_string(t) + " is '" + name + "', expected '" +
                               std::string(tensor_name(tensor)) + "'");
    const auto rows = r.le<std::uint64_t>(), cols = r.le<std::uint64_t>();
    const auto [er, ec] = p.shape(tensor);
    if (rows != er || cols != ec)
      throw std::runtime_error("checkpoint tensor " + name + " has shape " + std::to_string(rows) + "x" +
                               std::to_string(cols) + ", expected " + std::to_string(er) + "x" + std::to_string(ec));
    auto flat = p.flat().subspan(p.offset(tensor), rows * cols);
    for (double& v : flat) v = r.le<double>();
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  if (!(ckpt.velocity.size() == 0 || ckpt.velocity.dims() == ckpt.params.dims()))
    throw std::invalid_argument("checkpoint velocity does not match parameter shapes");
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le(kCheckpointVersion);
  w.str(ckpt.config_echo);
  w.le(ckpt.vocab_hash);
  w.le<std::uint64_t>(ckpt.params.dims().vocab);
  w.le<std::uint64_t>(ckpt.params.dims().dim);
  w.le(ckpt.epoch);
  w.str(ckpt.phase);
  w.le(ckpt.lr);
  w.le<std::uint64_t>(ckpt.valid_history.size());
  for (double v : ckpt.valid_history) w.le(v);
  write_tensors(w, ckpt.params);
  w.le<std::uint8_t>(ckpt.velocity.size() ? 1 : 0);
  if (ckpt.velocity.size()) write_tensors(w, ckpt.velocity);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, std::optional<std::uint64_t> expected_vocab_hash) {
  Reader r(bytes);
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("not a checkpoint file");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_echo = r.str();
  c.vocab_hash = r.le<std::uint64_t>();
  if (expected_vocab_hash && *expected_vocab_hash != c.vocab_hash)
    throw std::runtime_error("checkpoint vocabulary hash does not match the vocabulary");
  ModelDims dims;
  dims.vocab = r.le<std::uint64_t>();
  dims.dim = r.le<std::uint64_t>();
  if (dims.vocab == 0 || dims.dim == 0 || dims.vocab > (1u << 24) || dims.dim > (1u << 16))
    throw std::runtime_error("checkpoint has implausible dimensions");
  c.epoch = r.le<std::uint64_t>();
  c.phase = r.str();
  c.lr = r.le<double>();
  const auto n = r.le<std::uint64_t>();
  if (n > bytes.size()) throw std::runtime_error("checkpoint truncated");
  c.valid_history.resize(n);
  for (double& v : c.valid_history) v = r.le<double>();
  c.params = Params(dims);
  read_tensors(r, c.params);
  if (r.le<std::uint8_t>()) {
    c.velocity = Params(dims);
    read_tensors(r, c.velocity);
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), expected_vocab_hash);
}

}  // namespace seqlevel
