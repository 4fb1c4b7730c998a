#include "localdom/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "localdom/error.hpp"

namespace localdom {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kBadCheckpoint, "truncated archive");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const nn::Tensor* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : blobs) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string serialize_archive(const Archive& archive) {
  std::string out = "LDCK";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, archive.config_json.size());
  out += archive.config_json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.blobs.size()));
  for (const auto& [name, tensor] : archive.blobs) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const auto& s = tensor.shape();
    for (int dim : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, dim);
    put<std::uint64_t>(out, tensor.size());
    out.append(reinterpret_cast<const char*>(tensor.data().data()), tensor.size() * sizeof(double));
  }
  return out;
}

Archive parse_archive(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != "LDCK") throw Error(ErrorCode::kBadCheckpoint, "bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kBadCheckpoint, "unsupported archive version " + std::to_string(version));
  }
  Archive archive;
  archive.config_json = std::string(in.take(in.get<std::uint64_t>()));
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(in.take(in.get<std::uint32_t>()));
    nn::Shape shape;
    shape.n = in.get<std::int32_t>();
    shape.c = in.get<std::int32_t>();
    shape.h = in.get<std::int32_t>();
    shape.w = in.get<std::int32_t>();
    const auto n = in.get<std::uint64_t>();
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0 || n != shape.numel()) {
      throw Error(ErrorCode::kBadCheckpoint, "blob shape mismatch for " + name);
    }
    std::vector<double> data(n);
    const auto raw = in.take(n * sizeof(double));
    std::memcpy(data.data(), raw.data(), raw.size());
    archive.blobs.emplace_back(std::move(name), nn::Tensor(shape, std::move(data)));
  }
  if (!in.done()) throw Error(ErrorCode::kBadCheckpoint, "trailing bytes in archive");
  return archive;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kMissingFile, path.string());
  return parse_archive(read_file(path));
}

void store_params(Archive& archive, const nn::ParamList& params, const std::string& prefix) {
  for (const auto& [name, var] : params.items()) archive.blobs.emplace_back(prefix + name, var->value);
}

void load_params(const Archive& archive, const nn::ParamList& params, const std::string& prefix) {
  for (const auto& [name, var] : params.items()) {
    const nn::Tensor* blob = archive.find(prefix + name);
    if (!blob) throw Error(ErrorCode::kBadCheckpoint, "missing parameter " + prefix + name);
    if (!(blob->shape() == var->value.shape())) {
      throw Error(ErrorCode::kBadCheckpoint, "shape mismatch for " + prefix + name);
    }
    var->value = *blob;
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIoError, "short write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIoError, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace localdom
