#include "dmcl/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dmcl/errors.hpp"

namespace dmcl {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'M', 'C', 'L', 'A', 'R', 'C', 'H'};

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError(origin_ + ": truncated archive");
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor<float>& Archive::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw DataError("archive has no tensor named '" + name + "'");
}

std::string serialize_archive(const Archive& archive) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kArchiveVersion);
  const std::string meta = archive.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, archive.tensors.size());
  for (const auto& nt : archive.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out += nt.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(nt.tensor.data()), nt.tensor.size() * sizeof(float));
  }
  return out;
}

Archive deserialize_archive(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw DataError(origin + ": not a dmcl archive");
  const auto version = r.get<std::uint32_t>();
  if (version != kArchiveVersion)
    throw DataError(origin + ": unsupported archive version " + std::to_string(version));
  Archive a;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    a.metadata = nlohmann::json::parse(r.str(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": corrupt metadata: " + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    nt.tensor = Tensor<float>(shape);
    r.floats(nt.tensor.data(), nt.tensor.size());
    a.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw DataError(origin + ": trailing bytes after archive");
  return a;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const std::string bytes = serialize_archive(archive);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_archive(ss.str(), path.string());
}

}  // namespace dmcl
