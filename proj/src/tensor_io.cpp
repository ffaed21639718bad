#include "stica/tensor_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace stica {

static_assert(std::endian::native == std::endian::little, "tensor files are written on little-endian hosts");

const Tensor& TensorFile::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("tensor file has no entry '" + name + "'");
}

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}
  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const char* take(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) throw IoError(path_ + ": truncated while reading " + what);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::vector<char> data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_tensor_file(const std::string& path, const TensorFile& file) {
  Writer w;
  w.bytes("STCA", 4);
  w.put<std::uint16_t>(TensorFile::kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    if (name.size() > 0xffff) throw IoError("tensor name too long: " + name.substr(0, 40) + "...");
    if (t.rank() > 0xff) throw IoError("tensor rank too large for " + name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (double v : t.values()) w.put<float>(static_cast<float>(v));
  }
  w.put<std::uint64_t>(file.step);
  w.put<std::uint64_t>(file.epoch);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(file.rng_state.size()));
  w.bytes(file.rng_state.data(), file.rng_state.size());
  w.bytes(file.digest.data(), file.digest.size());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!os) throw IoError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move " + tmp + " to " + path);
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open tensor file " + path);
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(is), {}), path);
  if (std::memcmp(r.take(4, "magic"), "STCA", 4) != 0) throw IoError(path + ": bad magic, not a tensor file");
  const auto version = r.get<std::uint16_t>("version");
  if (version != TensorFile::kVersion)
    throw IoError(path + ": unsupported version " + std::to_string(version) + " (expected " +
                  std::to_string(TensorFile::kVersion) + ")");
  TensorFile file;
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.take(len, "name"), len);
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.get<std::uint32_t>("extent");
      if (e == 0) throw IoError(path + ": zero extent in tensor " + name);
    }
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = static_cast<double>(r.get<float>("values"));
    file.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  file.step = r.get<std::uint64_t>("step");
  file.epoch = r.get<std::uint64_t>("epoch");
  const auto rng_len = r.get<std::uint32_t>("rng state length");
  file.rng_state.assign(r.take(rng_len, "rng state"), rng_len);
  std::memcpy(file.digest.data(), r.take(32, "config digest"), 32);
  if (!r.done()) throw IoError(path + ": trailing bytes after config digest");
  return file;
}

std::array<std::uint8_t, 32> sha256(const std::string& text) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    throw IoError("sha256 failed");
  return out;
}

std::string hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  for (auto b : bytes) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

void round_to_float32(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace stica
