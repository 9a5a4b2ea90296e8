#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "dmcl/archive.hpp"
#include "dmcl/datasets.hpp"
#include "dmcl/losses.hpp"
#include "dmcl/mixup.hpp"
#include "dmcl/model.hpp"
#include "dmcl/optim.hpp"
#include "json.hpp"

namespace dmcl {

struct AblationFlags {
  bool disable_dual_mixup = false;   // drop L_md and L_mf from the adversarial step
  bool disable_contrastive = false;  // skip the contrastive step entirely

  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  std::size_t batch_k = 64;
  std::size_t total_iterations = 7000;  // one iteration = adversarial + contrastive step
  double learning_rate = 2e-4;
  double lr_decay_factor = 0.1;
  double lr_decay_at_fraction = 0.5;
  double alpha = 1.0;  // Beta(alpha, alpha) for mixing coefficients
  double grl_coefficient = 1.0;
  // 0: constant coefficient. Otherwise the coefficient ramps linearly from 0
  // to grl_coefficient over this many iterations.
  std::size_t grl_ramp_iterations = 0;
  double temperature = 0.5;
  bool include_positive_in_denominator = false;
  // Contrastive gradients reach g unreversed by default; these two switch to
  // passing the domain-side contrastive gradient through the GRL, or to
  // keeping g fixed during the contrastive step.
  bool contrastive_through_grl = false;
  bool freeze_shared_in_contrastive = false;
  std::uint64_t seed = 0;
  AblationFlags ablation;

  void validate() const;
  double learning_rate_at(std::size_t iteration) const;
  double grl_coefficient_at(std::size_t iteration) const;
  ContrastiveConfig contrastive() const {
    return {temperature, batch_k, include_positive_in_denominator};
  }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct MetricsRecord {
  std::size_t iteration = 0;
  LossReport report;
};

struct TrainState {
  std::size_t iteration = 0;
  ModelBundle<float> model;
  Adam<float> optimizer;
  Rng data_rng;
  Rng mixup_rng;
  std::vector<MetricsRecord> metrics_log;
  // Ids of every sample that entered a gradient step.
  std::unordered_set<std::uint64_t> consumed_ids;
};

TrainState init_train_state(const ArchitectureConfig& arch, const TrainConfig& cfg);

// ---- adversarial objective ----

// One forward batch for the adversarial step. Rows are laid out as
//   [0, K)   source ToI      [K, 2K)  source IrT      [2K, 3K) target IrT
//   [3K, 4K) L_md mixes (source x target IrT)
//   [4K, 5K) L_mf mixes (source ToI x IrT of either domain)
// with the mix blocks present only when dual mixup is enabled.
template <typename T>
struct AdversarialBatch {
  Tensor<T> images;
  std::size_t k = 0;
  bool has_mixes = false;
  std::vector<std::size_t> toi_targets;  // K
  std::vector<std::size_t> irt_targets;  // 2K (source IrT then target IrT)
  std::vector<double> md_lams;           // K
  std::vector<double> mf_lams;           // K
  std::vector<std::size_t> mf_left;      // ToI classes of the mf mixes
  std::vector<std::size_t> mf_right;     // IrT classes of the mf mixes
};

AdversarialBatch<float> make_adversarial_batch(const TripletBatch& tb, double alpha, Rng& rng,
                                               bool with_mixes);

// Weights of the four terms in the scalar whose gradient is produced.
struct AdversarialWeights {
  double d = 0.0, md = 0.0, f = 0.0, mf = 0.0;
};

// Minimization form used by the optimizer: the domain branch ascends L_d and
// L_md, the task side descends L_f and L_mf, and the GRL hands g the reversed
// domain gradient.
inline constexpr AdversarialWeights kAdversarialDescent{-1.0, -1.0, 1.0, 1.0};

template <typename T>
struct ObjectiveResult {
  LossReport report;
  OutputGradients<T> grads;
};

// Forward pass plus loss values and output gradients of the weighted sum.
template <typename T>
ObjectiveResult<T> adversarial_objective(ModelBundle<T>& model, const AdversarialBatch<T>& batch,
                                         const AdversarialWeights& weights, nn::Mode mode);

// ---- contrastive objective ----

// Rows [A; B; C], each K long, built with one shared lambda.
template <typename T>
struct ContrastiveBatch {
  Tensor<T> images;
  std::size_t k = 0;
  double lam = 1.0;
};

ContrastiveBatch<float> make_contrastive_batch(const TripletBatch& tb, double lam);

template <typename T>
ObjectiveResult<T> contrastive_objective(ModelBundle<T>& model, const ContrastiveBatch<T>& batch,
                                         const ContrastiveConfig& cfg, double weight_con_f,
                                         double weight_con_d, nn::Mode mode);

// ---- steps ----

// Raised on a non-finite loss; what() carries the diagnostic snapshot.
class TrainingAborted : public NumericError {
 public:
  using NumericError::NumericError;
};

LossReport adversarial_step(TrainState& state, const TripletBatch& triplet, const TrainConfig& cfg);
LossReport contrastive_step(TrainState& state, const TripletBatch& triplet, const TrainConfig& cfg);

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::size_t checkpoint_interval = 0;   // 0: only the final checkpoint
  std::filesystem::path metrics_path;    // empty: metrics kept in memory only
  std::function<void(const TrainState&)> on_iteration;
};

// Runs alternation pairs until state.iteration == until_iteration.
void run_training(TrainState& state, const TrainingView& data, const TrainConfig& cfg,
                  std::size_t until_iteration, const TrainOptions& options = {});

// Fresh state, cfg.total_iterations pairs, final checkpoint.
TrainState train(const TrainingView& data, const ArchitectureConfig& arch, const TrainConfig& cfg,
                 const TrainOptions& options = {});

// Number of consumed ids that belong to `split` (the evaluation guard).
std::size_t count_consumed(const TrainState& state, std::span<const LabeledImage> split);

// ---- persistence ----

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& cfg);
struct LoadedCheckpoint {
  TrainState state;
  TrainConfig config;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

Archive checkpoint_archive(const TrainState& state, const TrainConfig& cfg);
LoadedCheckpoint checkpoint_from_archive(const Archive& archive);

void write_metrics_log(const std::filesystem::path& path, const std::vector<MetricsRecord>& log);
std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path& path);

// Loads a parameter archive whose tensors are matched positionally to the
// backbone parameters: first g, then g_f (g_d receives the same values).
void load_backbone_weights(ModelBundle<float>& model, const std::filesystem::path& path);

}  // namespace dmcl
