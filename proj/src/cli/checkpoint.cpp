#include "radiff/cli/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace radiff::cli {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'D', 'I', 'F', 'F', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const TensorMap& tensors) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    if (name.empty()) throw CheckpointError("checkpoint: empty tensor name");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) {
      const auto f = static_cast<float>(v);
      if (!std::isfinite(f)) throw CheckpointError("checkpoint: tensor " + name + " has a non-finite value");
      put<float>(out, f);
    }
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

TensorMap decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("checkpoint: not a checkpoint file");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc_of(bytes.data(), body)) throw CheckpointError("checkpoint: checksum mismatch");

  Reader r(bytes, body);
  r.take(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto count = r.get<std::uint64_t>();
  TensorMap out;
  std::string previous;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = r.take(r.get<std::uint32_t>());
    if (i > 0 && !(previous < name)) throw CheckpointError("checkpoint: tensors not sorted by name");
    previous = name;
    const auto rank = r.get<std::uint32_t>();
    numcore::Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      numel *= d;
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = static_cast<double>(r.get<float>());
    out.emplace(name, numcore::Tensor::from_data(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing data");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void collect(const numcore::ParamSet& params, TensorMap& out) {
  for (const auto& [name, t] : params.entries())
    if (!out.emplace(name, t).second) throw CheckpointError("checkpoint: duplicate tensor " + name);
}

void assign(numcore::ParamSet& params, const TensorMap& tensors) {
  std::size_t matched = 0;
  for (const auto& [name, t] : params.entries()) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint does not match the model: missing " + name);
    if (it->second.shape() != t.shape())
      throw CheckpointError("checkpoint does not match the model: " + name + " has shape " +
                            numcore::shape_string(it->second.shape()) + ", expected " + numcore::shape_string(t.shape()));
    ++matched;
  }
  std::size_t stored = 0;
  for (const auto& [name, t] : tensors)
    if (name.rfind("meta.", 0) != 0) ++stored;
  if (stored != matched) throw CheckpointError("checkpoint does not match the model: it holds extra tensors");
  for (const auto& [name, t] : params.entries()) {
    numcore::Tensor handle = t;
    const auto src = tensors.at(name).data();
    std::copy(src.begin(), src.end(), handle.mutable_data().begin());
  }
}

}  // namespace radiff::cli
