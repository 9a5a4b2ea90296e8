#include "dmcl/xnist.hpp"

#include <numeric>

#include "dmcl/errors.hpp"

namespace dmcl {

namespace {

constexpr std::uint64_t kSelectStream = 0x5e1ec7;

const char* const kFashionNames[10] = {"tshirt", "trouser", "pullover", "dress", "coat",
                                       "sandal", "shirt",   "sneaker",  "bag",   "boot"};

std::vector<LabeledImage> make_split(const IdxCorpus& corpus, std::span<const std::size_t> picks,
                                     Task task, DomainTag tag, double domain,
                                     const std::string& prefix, const XnistOptions& opts) {
  std::vector<RawImage> raw;
  raw.reserve(picks.size());
  for (std::size_t i : picks) raw.push_back(corpus.images.image(i, prefix + std::to_string(i)));
  const auto images = synthesize_domain(raw, tag, derive_seed(opts.seed, kSelectStream, 99), opts.synth);
  std::vector<LabeledImage> out;
  out.reserve(picks.size());
  for (std::size_t j = 0; j < picks.size(); ++j) {
    const std::string path = prefix + "/" + std::string(to_string(tag)) + "/" +
                             std::to_string(picks[j]) + ".ppm";
    out.push_back(make_labeled(images[j].image, corpus.labels[picks[j]], task, domain, path));
  }
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t index) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, kSelectStream, index));
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

IdxCorpus read_idx_corpus(const std::filesystem::path& dir, const std::string& name) {
  IdxCorpus c{read_idx_images(dir / (name + "-images.idx")),
              read_idx_labels(dir / (name + "-labels.idx"))};
  if (c.labels.size() != c.images.count)
    throw DataError(name + ": " + std::to_string(c.images.count) + " images but " +
                    std::to_string(c.labels.size()) + " labels");
  for (auto l : c.labels)
    if (l > 9) throw DataError(name + ": label " + std::to_string(l) + " outside 0..9");
  return c;
}

ZsdaDataset build_xnist_task(const IdxCorpus& digits, const IdxCorpus& fashion,
                             const XnistOptions& opts) {
  if (opts.per_split == 0 || opts.eval_size == 0) throw ConfigError("split sizes must be positive");
  if (opts.source == opts.target) throw ConfigError("source and target domains must differ");
  if (digits.images.count < opts.per_split + opts.eval_size)
    throw DataError("digit corpus has " + std::to_string(digits.images.count) + " images, " +
                    std::to_string(opts.per_split + opts.eval_size) + " needed");
  if (fashion.images.count < 2 * opts.per_split)
    throw DataError("fashion corpus has " + std::to_string(fashion.images.count) + " images, " +
                    std::to_string(2 * opts.per_split) + " needed");

  const auto d = shuffled(digits.images.count, opts.seed, 0);
  const auto f = shuffled(fashion.images.count, opts.seed, 1);
  const std::span<const std::size_t> ds(d), fs(f);
  const std::size_t k = opts.per_split;

  LabelSpaces spaces;
  for (int i = 0; i < 10; ++i) spaces.toi_classes.push_back("digit_" + std::to_string(i));
  for (const char* n : kFashionNames) spaces.irt_classes.push_back(n);

  return ZsdaDataset(
      make_split(digits, ds.subspan(0, k), Task::kToi, opts.source, 0.0, "digits", opts),
      make_split(fashion, fs.subspan(0, k), Task::kIrt, opts.source, 0.0, "fashion", opts),
      make_split(fashion, fs.subspan(k, k), Task::kIrt, opts.target, 1.0, "fashion", opts),
      make_split(digits, ds.subspan(k, opts.eval_size), Task::kToi, opts.target, 1.0, "digits",
                 opts),
      std::move(spaces));
}

ZsdaDataset load_xnist(const std::filesystem::path& dir, const XnistOptions& opts) {
  return build_xnist_task(read_idx_corpus(dir, "digits"), read_idx_corpus(dir, "fashion"), opts);
}

}  // namespace dmcl
