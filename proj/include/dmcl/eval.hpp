#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmcl/datasets.hpp"
#include "dmcl/model.hpp"
#include "dmcl/trainer.hpp"

namespace dmcl {

struct RunMetadata {
  std::uint64_t seed = 0;
  std::string config_digest;  // FNV-1a of the canonical arch + train JSON, hex
  std::string checkpoint_id;
};

struct EvalResult {
  double target_toi_accuracy = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_correct = 0;
  std::map<std::size_t, double> per_class_accuracy;
  std::map<std::size_t, std::size_t> per_class_count;
  RunMetadata run_metadata;
};

// Top-1 accuracy of the ToI head, in eval mode, batched. Every sample must
// be a target-domain ToI sample.
EvalResult evaluate(ModelBundle<float>& model, std::span<const LabeledImage> eval_split,
                    std::size_t batch_size = 256);

// Accuracy bookkeeping from raw ToI logits (N x C) and true classes.
EvalResult accuracy_from_logits(const Tensor<float>& logits, std::span<const std::size_t> truth);

std::string config_digest(const ArchitectureConfig& arch, const TrainConfig& cfg);

// ---- ablation ----

enum class Variant { kFull, kNoDualMixup, kNoContrastive, kSourceOnly };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::kFull, Variant::kNoDualMixup,
                                           Variant::kNoContrastive, Variant::kSourceOnly};

// The base config with the variant's flags applied. source_only also sets the
// GRL coefficient to 0.
TrainConfig variant_config(const TrainConfig& base, Variant v);

struct AblationRow {
  Variant variant = Variant::kFull;
  std::uint64_t seed = 0;
  EvalResult result;
  std::size_t eval_samples_consumed = 0;  // guard; 0 for a clean run
};

struct AblationOptions {
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  std::filesystem::path output_dir;  // per-run checkpoints and metrics when set
  // Called after each run with the trained state (e.g. for feature export).
  std::function<void(const AblationRow&, const TrainState&)> on_run;
  std::function<void(const std::string&)> log;
  std::size_t progress_interval = 0;  // iterations between progress log lines (0: none)
  // With output_dir set: a run whose checkpoint already holds the finished
  // model under the same configuration is loaded instead of retrained.
  bool reuse_finished = false;
};

// Seeds are base.seed + s for s in [0, n_seeds). Rows are ordered by seed,
// then by variant.
std::vector<AblationRow> run_ablation_matrix(const ZsdaDataset& dataset,
                                             const ArchitectureConfig& arch,
                                             const TrainConfig& base, std::size_t n_seeds,
                                             const AblationOptions& options = {});

// "variant<TAB>seed<TAB>accuracy" per row, with a header line.
std::string ablation_table(const std::vector<AblationRow>& rows);
// Per-variant mean and spread over seeds.
std::string ablation_summary(const std::vector<AblationRow>& rows);
std::map<Variant, double> variant_means(const std::vector<AblationRow>& rows);

// ---- feature export ----

enum class EmbeddingSource { kGF, kGD };

std::string_view to_string(EmbeddingSource s);
EmbeddingSource parse_embedding_source(std::string_view name);

struct FeatureRow {
  std::vector<double> embedding;
  Task task = Task::kToi;
  double domain = 0.0;
  std::size_t class_index = 0;
  std::string split;
};

struct FeatureDump {
  EmbeddingSource source = EmbeddingSource::kGF;
  std::vector<FeatureRow> rows;

  std::size_t dim() const { return rows.empty() ? 0 : rows.front().embedding.size(); }
};

// samples_per_split rows from each of source_irt, source_toi, target_irt,
// target_toi_eval (in that order), drawn without replacement under `seed`.
FeatureDump export_features(ModelBundle<float>& model, const ZsdaDataset& dataset,
                            EmbeddingSource source, std::size_t samples_per_split,
                            std::uint64_t seed);

// Header `dim_0,...,dim_{m-1},task,domain,class,split`, one row per line.
void write_feature_dump(const std::filesystem::path& path, const FeatureDump& dump);
FeatureDump read_feature_dump(const std::filesystem::path& path);

struct DisentanglementScore {
  // Mean over tasks of the cosine similarity between the source and target
  // centroids, i.e. 1 - mean cosine distance. 1 when the domains coincide.
  double domain_alignment = 0.0;
  // (b - a) / max(a, b) with b the mean Euclidean distance between rows of
  // different tasks and a the mean distance between rows of the same task.
  // In [-1, 1]; 0 with `degenerate` set when a = b = 0.
  double task_separation = 0.0;
  bool degenerate = false;
};

DisentanglementScore disentanglement_score(const FeatureDump& dump);

}  // namespace dmcl
