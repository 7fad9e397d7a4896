#include "tprl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tprl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

const CheckpointNet& Checkpoint::find(const std::string& name) const {
  for (const auto& n : nets) {
    if (n.name == name) return n;
  }
  throw CheckpointError("checkpoint has no network named '" + name + "'");
}

namespace {

class Writer {
 public:
  template <typename T>
  void pod(T value) {
    const char* p = reinterpret_cast<const char*>(&value);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void doubles(const std::vector<double>& v) {
    pod(static_cast<std::uint64_t>(v.size()));
    const char* p = reinterpret_cast<const char*>(v.data());
    out_.insert(out_.end(), p, p + v.size() * sizeof(double));
  }
  std::vector<char> take() { return std::move(out_); }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& in) : in_(in) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(in_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = pod<std::uint64_t>();
    if (n > (in_.size() - pos_) / sizeof(double)) throw CheckpointError("checkpoint truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<char>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kCheckpointMagic) w.pod(c);
  w.pod(kCheckpointVersion);
  w.str(ckpt.algo);
  w.pod(ckpt.config_hash);
  w.pod(ckpt.epoch);
  w.pod(static_cast<std::uint32_t>(ckpt.nets.size()));
  for (const auto& n : ckpt.nets) {
    w.str(n.name);
    w.pod(static_cast<std::uint32_t>(n.net.sizes.size()));
    for (int s : n.net.sizes) w.pod(static_cast<std::int32_t>(s));
    w.doubles(n.net.params);
    w.pod(n.opt.lr);
    w.pod(n.opt.beta1);
    w.pod(n.opt.beta2);
    w.pod(n.opt.eps);
    w.pod(n.opt.t);
    w.doubles(n.opt.m);
    w.doubles(n.opt.v);
  }
  w.str(ckpt.rng_state);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  Reader r(bytes);
  for (char c : kCheckpointMagic) {
    if (r.pod<char>() != c) throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.algo = r.str();
  ckpt.config_hash = r.pod<std::uint64_t>();
  ckpt.epoch = r.pod<std::int64_t>();
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointNet n;
    n.name = r.str();
    const auto layers = r.pod<std::uint32_t>();
    if (layers < 2 || layers > 64) throw CheckpointError("bad layer count");
    std::vector<int> sizes;
    for (std::uint32_t l = 0; l < layers; ++l) sizes.push_back(r.pod<std::int32_t>());
    try {
      n.net = make_mlp(sizes);
    } catch (const ShapeError& e) {
      throw CheckpointError(std::string("bad architecture: ") + e.what());
    }
    n.net.params = r.doubles();
    if (n.net.params.size() != mlp_param_count(n.net.sizes)) {
      throw CheckpointError("parameter count does not match architecture");
    }
    n.opt.lr = r.pod<double>();
    n.opt.beta1 = r.pod<double>();
    n.opt.beta2 = r.pod<double>();
    n.opt.eps = r.pod<double>();
    n.opt.t = r.pod<std::int64_t>();
    n.opt.m = r.doubles();
    n.opt.v = r.doubles();
    if (n.opt.m.size() != n.net.params.size() || n.opt.v.size() != n.net.params.size()) {
      throw CheckpointError("optimizer moments do not match parameters");
    }
    ckpt.nets.push_back(std::move(n));
  }
  ckpt.rng_state = r.str();
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<char> bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace tprl
