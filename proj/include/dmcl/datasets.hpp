#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmcl/image.hpp"
#include "dmcl/rng.hpp"

namespace dmcl {

enum class Task { kToi, kIrt };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

// One training or evaluation sample. Pixels are 3 x H x W, planar, in [0, 1].
// class_index is local to the label space of `task`.
struct LabeledImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  std::size_t class_index = 0;
  Task task = Task::kToi;
  double domain_label = 0.0;  // 0 = source, 1 = target
  std::uint64_t sample_id = 0;
  std::string path;

  std::size_t pixel_count() const { return pixels.size(); }
};

LabeledImage make_labeled(const ColorImage& img, std::size_t class_index, Task task,
                          double domain_label, std::string path);

std::uint64_t sample_id_for(std::string_view path);

struct LabelSpaces {
  std::vector<std::string> toi_classes;
  std::vector<std::string> irt_classes;

  std::size_t size(Task task) const {
    return task == Task::kToi ? toi_classes.size() : irt_classes.size();
  }
  void validate() const;
};

// Chooses `toi_count` classes uniformly at random (under `seed`) as the task
// of interest; the rest become the irrelevant task. Both lists keep the input
// order.
LabelSpaces partition_label_space(std::span<const std::string> all_classes,
                                  std::size_t toi_count, std::uint64_t seed);

enum class Split { kSourceToi, kSourceIrt, kTargetIrt, kTargetToiEval };

std::string_view to_string(Split split);

using SampleRefs = std::vector<std::reference_wrapper<const LabeledImage>>;

// The part of a dataset a trainer may touch. It deliberately has no route to
// the held-out target-ToI split.
class TrainingView {
 public:
  TrainingView(const std::vector<LabeledImage>& source_toi,
               const std::vector<LabeledImage>& source_irt,
               const std::vector<LabeledImage>& target_irt, const LabelSpaces& spaces)
      : source_toi_(&source_toi), source_irt_(&source_irt), target_irt_(&target_irt),
        spaces_(&spaces) {}

  const std::vector<LabeledImage>& source_toi() const { return *source_toi_; }
  const std::vector<LabeledImage>& source_irt() const { return *source_irt_; }
  const std::vector<LabeledImage>& target_irt() const { return *target_irt_; }
  const LabelSpaces& label_spaces() const { return *spaces_; }

 private:
  const std::vector<LabeledImage>* source_toi_;
  const std::vector<LabeledImage>* source_irt_;
  const std::vector<LabeledImage>* target_irt_;
  const LabelSpaces* spaces_;
};

class ZsdaDataset {
 public:
  ZsdaDataset() = default;
  // Validates every invariant and throws DataError on the first violation.
  ZsdaDataset(std::vector<LabeledImage> source_toi, std::vector<LabeledImage> source_irt,
              std::vector<LabeledImage> target_irt, std::vector<LabeledImage> target_toi_eval,
              LabelSpaces label_spaces);

  TrainingView training_view() const {
    return TrainingView(source_toi_, source_irt_, target_irt_, label_spaces_);
  }
  // Evaluation entry point; training code receives a TrainingView instead.
  const std::vector<LabeledImage>& evaluation_split() const { return target_toi_eval_; }

  const std::vector<LabeledImage>& split(Split s) const;
  const LabelSpaces& label_spaces() const { return label_spaces_; }
  std::size_t height() const;
  std::size_t width() const;

  void validate() const;

 private:
  std::vector<LabeledImage> source_toi_;
  std::vector<LabeledImage> source_irt_;
  std::vector<LabeledImage> target_irt_;
  std::vector<LabeledImage> target_toi_eval_;
  LabelSpaces label_spaces_;
};

// K samples from each training split, row-aligned.
struct TripletBatch {
  SampleRefs xs_r;
  SampleRefs xs_ir;
  SampleRefs xt_ir;

  std::size_t k() const { return xs_r.size(); }
  void validate() const;
};

// Draws k distinct samples per split (with replacement across calls).
TripletBatch sample_triplet_batch(const TrainingView& view, std::size_t k, Rng& rng);

// ---- on-disk layout ----
//
// <root>/classes.tsv          TOI|IRT <TAB> class name, in label-index order
// <root>/<split>.tsv          relative_path <TAB> class_index <TAB> TOI|IRT <TAB> 0|1
//
// with <split> one of source_toi, source_irt, target_irt, target_toi_eval.
ZsdaDataset load_manifest(const std::filesystem::path& root);

// Writes images (PPM) and manifests so that load_manifest(root) reproduces
// the dataset up to byte quantization of the pixels.
void save_dataset(const std::filesystem::path& root, const ZsdaDataset& ds);

struct SplitCheck {
  std::string name;
  bool ok = true;
  std::string detail;
};

// Non-throwing invariant report used by the validate-data command.
std::vector<SplitCheck> check_invariants(const ZsdaDataset& ds);

}  // namespace dmcl
