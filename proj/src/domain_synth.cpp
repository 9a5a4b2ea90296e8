#include "dmcl/domain_synth.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <utility>

#include "dmcl/errors.hpp"
#include "dmcl/rng.hpp"

namespace dmcl {

namespace {

constexpr std::uint64_t kPatchStream = 0x7a7c4e5dULL;

std::size_t clamp_index(long i, std::size_t n) {
  if (i < 0) return 0;
  if (static_cast<std::size_t>(i) >= n) return n - 1;
  return static_cast<std::size_t>(i);
}

// Separable Gaussian blur with replicated borders.
RawImage gaussian_blur(const RawImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const long radius = std::max(1L, static_cast<long>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (auto& v : kernel) v /= total;

  RawImage tmp(img.height, img.width);
  RawImage out(img.height, img.width, 0.0, img.source_id);
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k)
        acc += kernel[k + radius] * img.at(r, clamp_index(c + k, img.width));
      tmp.at(r, c) = acc;
    }
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k)
        acc += kernel[k + radius] * tmp.at(clamp_index(r + k, img.height), c);
      out.at(r, c) = acc;
    }
  return out;
}

// Bilinear resampling of one plane (align-corners convention).
void resize_plane(const double* src, std::size_t sh, std::size_t sw, double* dst, std::size_t dh,
                  std::size_t dw) {
  for (std::size_t r = 0; r < dh; ++r) {
    const double y = dh > 1 ? double(r) * double(sh - 1) / double(dh - 1) : 0.0;
    const std::size_t y0 = std::min(static_cast<std::size_t>(y), sh - 1);
    const std::size_t y1 = std::min(y0 + 1, sh - 1);
    const double fy = y - double(y0);
    for (std::size_t c = 0; c < dw; ++c) {
      const double x = dw > 1 ? double(c) * double(sw - 1) / double(dw - 1) : 0.0;
      const std::size_t x0 = std::min(static_cast<std::size_t>(x), sw - 1);
      const std::size_t x1 = std::min(x0 + 1, sw - 1);
      const double fx = x - double(x0);
      const double top = src[y0 * sw + x0] * (1 - fx) + src[y0 * sw + x1] * fx;
      const double bot = src[y1 * sw + x0] * (1 - fx) + src[y1 * sw + x1] * fx;
      dst[r * dw + c] = top * (1 - fy) + bot * fy;
    }
  }
}

ColorImage resize(const ColorImage& img, std::size_t h, std::size_t w) {
  if (img.height == h && img.width == w) return img;
  ColorImage out(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    resize_plane(img.pixels.data() + c * img.height * img.width, img.height, img.width,
                 out.pixels.data() + c * h * w, h, w);
  return out;
}

ColorImage crop(const ColorImage& img, std::size_t top, std::size_t left, std::size_t h,
                std::size_t w) {
  ColorImage out(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) out.at(c, r, col) = img.at(c, top + r, left + col);
  return out;
}

}  // namespace

void CannyOptions::validate() const {
  if (!(low_threshold > 0.0 && low_threshold < high_threshold && high_threshold < 1.0))
    throw ConfigError("Canny thresholds must satisfy 0 < low < high < 1 (got low=" +
                      std::to_string(low_threshold) + ", high=" + std::to_string(high_threshold) +
                      ")");
  if (sigma < 0.0) throw ConfigError("Canny sigma must be non-negative");
}

RawImage to_negative(const RawImage& img) {
  RawImage out = img;
  for (auto& p : out.pixels) p = 1.0 - p;
  return out;
}

RawImage to_edge(const RawImage& img, const CannyOptions& opts) {
  opts.validate();
  const std::size_t h = img.height, w = img.width;
  const RawImage smooth = gaussian_blur(img, opts.sigma);

  std::vector<double> mag(h * w), gx(h * w), gy(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      auto px = [&](long dr, long dc) {
        return smooth.at(clamp_index(long(r) + dr, h), clamp_index(long(c) + dc, w));
      };
      const double sx = (px(-1, 1) + 2 * px(0, 1) + px(1, 1)) - (px(-1, -1) + 2 * px(0, -1) + px(1, -1));
      const double sy = (px(1, -1) + 2 * px(1, 0) + px(1, 1)) - (px(-1, -1) + 2 * px(-1, 0) + px(-1, 1));
      gx[r * w + c] = sx / 4.0;
      gy[r * w + c] = sy / 4.0;
      mag[r * w + c] = std::hypot(sx, sy) / 4.0;
    }

  // Non-maximum suppression along the quantized gradient direction.
  std::vector<double> thin(h * w, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double m = mag[r * w + c];
      if (m < opts.low_threshold) continue;
      double angle = std::atan2(gy[r * w + c], gx[r * w + c]) * 180.0 / M_PI;
      if (angle < 0) angle += 180.0;
      long dr = 0, dc = 0;
      if (angle < 22.5 || angle >= 157.5) {
        dc = 1;
      } else if (angle < 67.5) {
        dr = 1;
        dc = 1;
      } else if (angle < 112.5) {
        dr = 1;
      } else {
        dr = 1;
        dc = -1;
      }
      auto neighbour = [&](long sr, long sc) -> double {
        const long rr = long(r) + sr, cc = long(c) + sc;
        if (rr < 0 || cc < 0 || rr >= long(h) || cc >= long(w)) return 0.0;
        return mag[rr * w + cc];
      };
      if (m > neighbour(-dr, -dc) && m >= neighbour(dr, dc)) thin[r * w + c] = m;
    }

  // Hysteresis: weak pixels survive only when 8-connected to a strong one.
  RawImage out(h, w, 0.0, img.source_id);
  std::deque<std::size_t> frontier;
  for (std::size_t i = 0; i < h * w; ++i)
    if (thin[i] >= opts.high_threshold) {
      out.pixels[i] = 1.0;
      frontier.push_back(i);
    }
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop_front();
    const long r = long(i / w), c = long(i % w);
    for (long dr = -1; dr <= 1; ++dr)
      for (long dc = -1; dc <= 1; ++dc) {
        const long rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= long(h) || cc >= long(w)) continue;
        const std::size_t j = std::size_t(rr) * w + std::size_t(cc);
        if (out.pixels[j] == 0.0 && thin[j] >= opts.low_threshold) {
          out.pixels[j] = 1.0;
          frontier.push_back(j);
        }
      }
  }
  return out;
}

PatchSampler::PatchSampler(TexturePatchSource source) : source_(std::move(source)) {
  if (source_.mode != PatchMode::kExternalDirectory) return;
  std::error_code ec;
  if (!std::filesystem::is_directory(source_.directory, ec))
    throw ConfigError("patch directory '" + source_.directory.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(source_.directory)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".pnm"))
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      textures_.push_back(read_pnm_color(f));
    } catch (const DataError&) {
      // unreadable files are skipped; an entirely unusable directory is an error below
    }
  }
  if (textures_.empty())
    throw ConfigError("patch directory '" + source_.directory.string() +
                      "' contains no readable PGM/PPM images");
}

ColorImage PatchSampler::sample(std::size_t index, std::size_t height, std::size_t width) const {
  Rng rng(derive_seed(source_.seed, kPatchStream, index));
  if (source_.mode == PatchMode::kProcedural) {
    constexpr std::size_t kGrid = 4;
    ColorImage grid(kGrid, kGrid);
    for (auto& v : grid.pixels) v = uniform01(rng);
    return resize(grid, height, width);
  }
  const ColorImage& tex = textures_[uniform_index(rng, textures_.size())];
  const std::size_t ph = std::min(source_.patch_size ? source_.patch_size : height, tex.height);
  const std::size_t pw = std::min(source_.patch_size ? source_.patch_size : width, tex.width);
  const std::size_t top = uniform_index(rng, tex.height - ph + 1);
  const std::size_t left = uniform_index(rng, tex.width - pw + 1);
  return resize(crop(tex, top, left, ph, pw), height, width);
}

ColorImage to_color(const RawImage& img, const ColorImage& patch, ColorBlend blend) {
  if (patch.height != img.height || patch.width != img.width)
    throw ShapeError("color patch does not match image size");
  ColorImage out(img.height, img.width);
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const double g = img.pixels[i];
      const double p = patch.pixels[c * plane + i];
      out.pixels[c * plane + i] =
          blend == ColorBlend::kAbsoluteDifference ? std::abs(g - p) : 0.5 * g + 0.5 * p;
    }
  return out;
}

ColorImage to_color(const RawImage& img, const PatchSampler& patches, std::size_t index,
                    ColorBlend blend) {
  return to_color(img, patches.sample(index, img.height, img.width), blend);
}

std::vector<DomainImage> synthesize_domain(std::span<const RawImage> corpus, DomainTag tag,
                                           std::uint64_t seed, const SynthOptions& opts) {
  if (corpus.empty()) throw ConfigError("synthesize_domain: empty corpus");
  std::unique_ptr<PatchSampler> sampler;
  if (tag == DomainTag::kColor) {
    TexturePatchSource src = opts.patches;
    src.seed = seed;
    sampler = std::make_unique<PatchSampler>(std::move(src));
  }
  if (tag == DomainTag::kEdge) opts.canny.validate();

  std::vector<DomainImage> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const RawImage& img = corpus[i];
    validate(img);
    DomainImage d;
    d.tag = tag;
    d.source_id = img.source_id;
    switch (tag) {
      case DomainTag::kGray: d.image = replicate_channels(img); break;
      case DomainTag::kNegative: d.image = replicate_channels(to_negative(img)); break;
      case DomainTag::kEdge: d.image = replicate_channels(to_edge(img, opts.canny)); break;
      case DomainTag::kColor: d.image = to_color(img, *sampler, i, opts.blend); break;
      default: throw ConfigError("synthesize_domain: unknown domain tag");
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace dmcl
