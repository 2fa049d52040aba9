#include "slidemask/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fsutil.hpp"

namespace slidemask {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) fail(ErrorKind::checkpoint, "checkpoint '" + path_ + "' is truncated");
  }

  const std::string& data_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  const std::string meta = ck.metadata.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
  }
  detail::write_text(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::not_found, "checkpoint '" + path + "' does not exist");
  const std::string data = detail::read_text(path);
  Reader in(data, path);
  if (in.bytes(4) != std::string(kMagic, 4)) fail(ErrorKind::checkpoint, "'" + path + "' is not a slidemask checkpoint");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion)
    fail(ErrorKind::checkpoint, "checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  Checkpoint ck;
  const auto meta_len = in.get<std::uint32_t>();
  try {
    ck.metadata = nlohmann::ordered_json::parse(in.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::checkpoint, "checkpoint '" + path + "' metadata: " + e.what());
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.bytes(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) fail(ErrorKind::checkpoint, "tensor '" + name + "' has implausible rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) {
      d = in.get<std::int32_t>();
      if (d < 0) fail(ErrorKind::checkpoint, "tensor '" + name + "' has a negative dimension");
    }
    Tensor t(shape);
    const std::string raw = in.bytes(t.numel() * sizeof(float));
    std::memcpy(t.data(), raw.data(), raw.size());
    ck.tensors.emplace(name, std::move(t));
  }
  if (!in.done()) fail(ErrorKind::checkpoint, "checkpoint '" + path + "' has trailing bytes");
  return ck;
}

}  // namespace slidemask
