#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dmcl/image.hpp"

namespace dmcl {

// Pixel-wise 1 - p; the unit-scale form of 255 - v.
RawImage to_negative(const RawImage& img);

struct CannyOptions {
  double low_threshold = 0.1;   // fractions of the maximum intensity step
  double high_threshold = 0.3;
  double sigma = 1.0;           // Gaussian pre-blur

  void validate() const;
};

// Canny edge map with values in {0, 1}. Gradient magnitudes are Sobel
// responses divided by 4, so an ideal unit step has magnitude 1.
RawImage to_edge(const RawImage& img, const CannyOptions& opts = {});

enum class PatchMode { kExternalDirectory, kProcedural };

// Where color-domain textures come from.
//  - kProcedural: a 4x4 grid of random RGB colors bilinearly upsampled to the
//    target size (low-frequency color noise).
//  - kExternalDirectory: random crops of `patch_size` pixels from the PGM/PPM
//    files found in `directory`, resized to the target size.
struct TexturePatchSource {
  PatchMode mode = PatchMode::kProcedural;
  std::filesystem::path directory;
  std::size_t patch_size = 0;  // 0: crop exactly the target size
  std::uint64_t seed = 0;
};

// Deterministic patch sampler; patch i depends only on (seed, i).
class PatchSampler {
 public:
  explicit PatchSampler(TexturePatchSource source);

  ColorImage sample(std::size_t index, std::size_t height, std::size_t width) const;
  const TexturePatchSource& source() const { return source_; }

 private:
  TexturePatchSource source_;
  std::vector<ColorImage> textures_;
};

enum class ColorBlend { kAbsoluteDifference, kConvex };

// |img - patch| per channel (or the 50/50 convex blend).
ColorImage to_color(const RawImage& img, const ColorImage& patch,
                    ColorBlend blend = ColorBlend::kAbsoluteDifference);
ColorImage to_color(const RawImage& img, const PatchSampler& patches, std::size_t index,
                    ColorBlend blend = ColorBlend::kAbsoluteDifference);

struct SynthOptions {
  CannyOptions canny;
  TexturePatchSource patches;
  ColorBlend blend = ColorBlend::kAbsoluteDifference;
};

struct DomainImage {
  ColorImage image;
  DomainTag tag = DomainTag::kGray;
  std::string source_id;
};

// Applies the transform selected by `tag` to every corpus image. All outputs
// are H x W x 3; gray images are replicated across channels. `seed` overrides
// opts.patches.seed, and image i draws its patch from a seed derived from
// (seed, i), so results do not depend on processing order.
std::vector<DomainImage> synthesize_domain(std::span<const RawImage> corpus, DomainTag tag,
                                           std::uint64_t seed, const SynthOptions& opts = {});

}  // namespace dmcl
