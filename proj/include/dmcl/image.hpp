#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dmcl {

// Single-channel image with unit-interval intensities, row-major.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  std::string source_id;

  RawImage() = default;
  RawImage(std::size_t h, std::size_t w, double fill = 0.0, std::string id = {})
      : height(h), width(w), pixels(h * w, fill), source_id(std::move(id)) {}

  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }

  bool operator==(const RawImage&) const = default;
};

// Throws ShapeError / DataError when the RawImage invariants do not hold
// (H, W >= 8, every pixel in [0, 1]).
void validate(const RawImage& img);

// Three-channel image, planar (channel-major) layout: index c*H*W + r*W + col.
struct ColorImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  ColorImage() = default;
  ColorImage(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pixels(3 * h * w, fill) {}

  double& at(std::size_t c, std::size_t r, std::size_t col) {
    return pixels[(c * height + r) * width + col];
  }
  double at(std::size_t c, std::size_t r, std::size_t col) const {
    return pixels[(c * height + r) * width + col];
  }

  bool operator==(const ColorImage&) const = default;
};

enum class DomainTag { kGray, kColor, kEdge, kNegative };

std::string_view to_string(DomainTag tag);
DomainTag parse_domain_tag(std::string_view name);

// Replicates a gray image across the three channels.
ColorImage replicate_channels(const RawImage& img);

// ---- file I/O (byte images; conversion to the unit interval happens here) ----

RawImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const RawImage& img);
// Accepts both P5 (replicated to 3 channels) and P6 files.
ColorImage read_pnm_color(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const ColorImage& img);

inline std::uint8_t to_byte(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(c * 255.0 + 0.5);
}

// IDX (MNIST-style) containers.
struct IdxImages {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bytes;

  RawImage image(std::size_t i, std::string source_id = {}) const;
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

}  // namespace dmcl
