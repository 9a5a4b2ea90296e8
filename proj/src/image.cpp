#include "dmcl/image.hpp"

#include <array>
#include <cctype>
#include <fstream>

#include "dmcl/errors.hpp"

namespace dmcl {

void validate(const RawImage& img) {
  if (img.height < 8 || img.width < 8)
    throw ShapeError("image '" + img.source_id + "' is smaller than 8x8");
  if (img.pixels.size() != img.height * img.width)
    throw ShapeError("image '" + img.source_id + "' has inconsistent pixel count");
  for (double p : img.pixels)
    if (!(p >= 0.0 && p <= 1.0))
      throw DataError("image '" + img.source_id + "' has a pixel outside [0,1]");
}

std::string_view to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::kGray: return "GRAY";
    case DomainTag::kColor: return "COLOR";
    case DomainTag::kEdge: return "EDGE";
    case DomainTag::kNegative: return "NEGATIVE";
  }
  throw ConfigError("unknown domain tag");
}

DomainTag parse_domain_tag(std::string_view name) {
  std::string upper(name);
  for (auto& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (upper == "GRAY" || upper == "G") return DomainTag::kGray;
  if (upper == "COLOR" || upper == "C") return DomainTag::kColor;
  if (upper == "EDGE" || upper == "E") return DomainTag::kEdge;
  if (upper == "NEGATIVE" || upper == "N") return DomainTag::kNegative;
  throw ConfigError("unknown domain tag '" + std::string(name) + "'");
}

ColorImage replicate_channels(const RawImage& img) {
  ColorImage out(img.height, img.width);
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c)
    std::copy(img.pixels.begin(), img.pixels.end(), out.pixels.begin() + c * plane);
  return out;
}

namespace {

struct PnmHeader {
  char kind = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  int maxval = 0;
};

// Reads the next whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

PnmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  PnmHeader h;
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P6")
    throw DataError(path.string() + ": not a binary PGM/PPM file");
  h.kind = magic[1];
  try {
    h.width = std::stoul(next_token(in));
    h.height = std::stoul(next_token(in));
    h.maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed header");
  }
  if (h.maxval <= 0 || h.maxval > 255)
    throw DataError(path.string() + ": only 8-bit images are supported");
  return h;
}

std::vector<std::uint8_t> read_body(std::istream& in, std::size_t n,
                                    const std::filesystem::path& path) {
  std::vector<std::uint8_t> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw DataError(path.string() + ": truncated");
  return buf;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::uint32_t read_be32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw DataError("truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace

RawImage read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_header(in, path);
  if (h.kind != '5') throw DataError(path.string() + ": expected a gray (P5) image");
  const auto buf = read_body(in, h.width * h.height, path);
  RawImage img(h.height, h.width, 0.0, path.string());
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i] / double(h.maxval);
  return img;
}

void write_pgm(const std::filesystem::path& path, const RawImage& img) {
  auto out = open_out(path);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (double p : img.pixels) out.put(static_cast<char>(to_byte(p)));
}

ColorImage read_pnm_color(const std::filesystem::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_header(in, path);
  const std::size_t plane = h.width * h.height;
  if (h.kind == '5') {
    const auto buf = read_body(in, plane, path);
    RawImage gray(h.height, h.width);
    for (std::size_t i = 0; i < plane; ++i) gray.pixels[i] = buf[i] / double(h.maxval);
    return replicate_channels(gray);
  }
  const auto buf = read_body(in, 3 * plane, path);
  ColorImage img(h.height, h.width);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[c * plane + i] = buf[3 * i + c] / double(h.maxval);
  return img;
}

void write_ppm(const std::filesystem::path& path, const ColorImage& img) {
  auto out = open_out(path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  const std::size_t plane = img.width * img.height;
  std::vector<char> buf(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      buf[3 * i + c] = static_cast<char>(to_byte(img.pixels[c * plane + i]));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

RawImage IdxImages::image(std::size_t i, std::string source_id) const {
  RawImage img(height, width, 0.0, std::move(source_id));
  const std::size_t n = height * width;
  for (std::size_t k = 0; k < n; ++k) img.pixels[k] = bytes[i * n + k] / 255.0;
  return img;
}

IdxImages read_idx_images(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (read_be32(in) != 0x00000803) throw DataError(path.string() + ": not an IDX image file");
  IdxImages out;
  out.count = read_be32(in);
  out.height = read_be32(in);
  out.width = read_be32(in);
  out.bytes = read_body(in, out.count * out.height * out.width, path);
  return out;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (read_be32(in) != 0x00000801) throw DataError(path.string() + ": not an IDX label file");
  const std::size_t n = read_be32(in);
  return read_body(in, n, path);
}

}  // namespace dmcl
