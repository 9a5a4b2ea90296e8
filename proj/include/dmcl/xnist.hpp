#pragma once

#include <cstdint>
#include <filesystem>

#include "dmcl/datasets.hpp"
#include "dmcl/domain_synth.hpp"
#include "dmcl/image.hpp"

namespace dmcl {

// Miniature X-NIST task: digits are the task of interest, clothing items the
// irrelevant task, and the domain shift is a per-pixel transform of the gray
// originals. Every split draws from its own disjoint set of base images.
struct XnistOptions {
  std::size_t per_split = 2000;   // source_toi, source_irt, target_irt
  std::size_t eval_size = 2000;   // target_toi_eval
  DomainTag source = DomainTag::kGray;
  DomainTag target = DomainTag::kNegative;
  std::uint64_t seed = 0;
  SynthOptions synth;
};

struct IdxCorpus {
  IdxImages images;
  std::vector<std::uint8_t> labels;
};

// Reads <dir>/{digits,fashion}-{images,labels}.idx.
IdxCorpus read_idx_corpus(const std::filesystem::path& dir, const std::string& name);

ZsdaDataset build_xnist_task(const IdxCorpus& digits, const IdxCorpus& fashion,
                             const XnistOptions& opts);

ZsdaDataset load_xnist(const std::filesystem::path& dir, const XnistOptions& opts);

}  // namespace dmcl
