#include "dmcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmcl/archive.hpp"
#include "dmcl/errors.hpp"

namespace dmcl {

namespace {

constexpr std::uint64_t kModelStream = 0x40de1;
constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kMixupStream = 0x312e;

bool finite(const LossReport& r) {
  for (double v : {r.l_d, r.l_md, r.l_f, r.l_mf, r.l_adv, r.l_con_d, r.l_con_f})
    if (!std::isfinite(v)) return false;
  return true;
}

std::string describe(const LossReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << "l_d=" << r.l_d << " l_md=" << r.l_md << " l_f=" << r.l_f << " l_mf=" << r.l_mf
     << " l_con_d=" << r.l_con_d << " l_con_f=" << r.l_con_f << " saturated=" << r.saturated;
  return os.str();
}

[[noreturn]] void abort_training(const char* step, const TrainState& state, const LossReport& r,
                                 double lr) {
  std::ostringstream os;
  os << step << " step produced a non-finite loss at iteration " << state.iteration << " (lr "
     << lr << "): " << describe(r);
  double worst = 0.0;
  std::string worst_name;
  auto& model = const_cast<ModelBundle<float>&>(state.model);
  for (const auto& np : model.parameters()) {
    for (float v : np.param->value.values()) {
      const double a = std::isfinite(v) ? std::abs(double(v)) : INFINITY;
      if (a > worst) {
        worst = a;
        worst_name = np.name;
      }
    }
  }
  os << "; largest parameter magnitude " << worst << " in " << worst_name;
  throw TrainingAborted(os.str());
}

void note_consumed(TrainState& state, const TripletBatch& tb) {
  for (const SampleRefs* refs : {&tb.xs_r, &tb.xs_ir, &tb.xt_ir})
    for (const LabeledImage& s : *refs) state.consumed_ids.insert(s.sample_id);
}

template <typename T>
void add_rows(Tensor<T>& into, std::size_t row_begin, const Tensor<T>& block, double weight) {
  const std::size_t row = into.stride0();
  if (block.stride0() != row) throw ShapeError("gradient block width mismatch");
  T* dst = into.data() + row_begin * row;
  for (std::size_t i = 0; i < block.size(); ++i) dst[i] += static_cast<T>(weight * block[i]);
}

template <typename T>
std::vector<double> prob_range(const Tensor<T>& p, std::size_t begin, std::size_t end) {
  std::vector<double> out(end - begin);
  for (std::size_t i = begin; i < end; ++i) out[i - begin] = double(p[i]);
  return out;
}

std::vector<nn::NamedParameter<float>> contrastive_parameters(ModelBundle<float>& model,
                                                              bool include_shared) {
  std::vector<nn::NamedParameter<float>> out;
  for (auto& np : model.parameters()) {
    const std::string& n = np.name;
    if (n.starts_with("g_f.") || n.starts_with("g_d.") || (include_shared && n.starts_with("g.")))
      out.push_back(np);
  }
  return out;
}

}  // namespace

// ---- config ----

void TrainConfig::validate() const {
  if (batch_k < 2) throw ConfigError("batch_k must be >= 2");
  if (total_iterations < 1) throw ConfigError("total_iterations must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(lr_decay_at_fraction > 0.0 && lr_decay_at_fraction <= 1.0))
    throw ConfigError("lr_decay_at_fraction must lie in (0, 1]");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be positive");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(grl_coefficient >= 0.0)) throw ConfigError("grl_coefficient must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

double TrainConfig::learning_rate_at(std::size_t iteration) const {
  const auto decay_at = static_cast<std::size_t>(
      std::floor(lr_decay_at_fraction * static_cast<double>(total_iterations)));
  return iteration < decay_at ? learning_rate : learning_rate * lr_decay_factor;
}

double TrainConfig::grl_coefficient_at(std::size_t iteration) const {
  if (grl_ramp_iterations == 0 || iteration >= grl_ramp_iterations) return grl_coefficient;
  return grl_coefficient * double(iteration) / double(grl_ramp_iterations);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"batch_k", c.batch_k},
      {"total_iterations", c.total_iterations},
      {"learning_rate", c.learning_rate},
      {"lr_decay_factor", c.lr_decay_factor},
      {"lr_decay_at_fraction", c.lr_decay_at_fraction},
      {"alpha", c.alpha},
      {"grl_coefficient", c.grl_coefficient},
      {"grl_ramp_iterations", c.grl_ramp_iterations},
      {"temperature", c.temperature},
      {"include_positive_in_denominator", c.include_positive_in_denominator},
      {"contrastive_through_grl", c.contrastive_through_grl},
      {"freeze_shared_in_contrastive", c.freeze_shared_in_contrastive},
      {"seed", c.seed},
      {"ablation_flags",
       {{"disable_dual_mixup", c.ablation.disable_dual_mixup},
        {"disable_contrastive", c.ablation.disable_contrastive}}},
  };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("batch_k", d.batch_k);
  get("total_iterations", d.total_iterations);
  get("learning_rate", d.learning_rate);
  get("lr_decay_factor", d.lr_decay_factor);
  get("lr_decay_at_fraction", d.lr_decay_at_fraction);
  get("alpha", d.alpha);
  get("grl_coefficient", d.grl_coefficient);
  get("grl_ramp_iterations", d.grl_ramp_iterations);
  get("temperature", d.temperature);
  get("include_positive_in_denominator", d.include_positive_in_denominator);
  get("contrastive_through_grl", d.contrastive_through_grl);
  get("freeze_shared_in_contrastive", d.freeze_shared_in_contrastive);
  get("seed", d.seed);
  if (j.contains("ablation_flags")) {
    const auto& a = j.at("ablation_flags");
    if (a.contains("disable_dual_mixup")) a.at("disable_dual_mixup").get_to(d.ablation.disable_dual_mixup);
    if (a.contains("disable_contrastive"))
      a.at("disable_contrastive").get_to(d.ablation.disable_contrastive);
  }
  c = d;
}

TrainState init_train_state(const ArchitectureConfig& arch, const TrainConfig& cfg) {
  arch.validate();
  cfg.validate();
  TrainState s{0,
               build_model<float>(arch, derive_seed(cfg.seed, kModelStream, 0)),
               Adam<float>(AdamConfig{}),
               Rng(derive_seed(cfg.seed, kDataStream, 0)),
               Rng(derive_seed(cfg.seed, kMixupStream, 0)),
               {},
               {}};
  if (!arch.pretrained_weights.empty()) load_backbone_weights(s.model, arch.pretrained_weights);
  return s;
}

// ---- adversarial objective ----

AdversarialBatch<float> make_adversarial_batch(const TripletBatch& tb, double alpha, Rng& rng,
                                               bool with_mixes) {
  tb.validate();
  const std::size_t k = tb.k();
  AdversarialBatch<float> b;
  b.k = k;
  b.has_mixes = with_mixes;

  const Tensor<float> sr = stack_pixels(tb.xs_r);
  const Tensor<float> sir = stack_pixels(tb.xs_ir);
  const Tensor<float> tir = stack_pixels(tb.xt_ir);
  const std::size_t row = sr.stride0();
  Shape shape = sr.shape();
  shape[0] = k * (with_mixes ? 5 : 3);
  b.images = Tensor<float>(shape);
  float* dst = b.images.data();
  std::copy(sr.data(), sr.data() + sr.size(), dst);
  std::copy(sir.data(), sir.data() + sir.size(), dst + k * row);
  std::copy(tir.data(), tir.data() + tir.size(), dst + 2 * k * row);

  for (const LabeledImage& s : tb.xs_r) b.toi_targets.push_back(s.class_index);
  for (const LabeledImage& s : tb.xs_ir) b.irt_targets.push_back(s.class_index);
  for (const LabeledImage& s : tb.xt_ir) b.irt_targets.push_back(s.class_index);
  if (!with_mixes) return b;

  auto span_row = [&](const Tensor<float>& t, std::size_t i) {
    return std::span<const float>(t.data() + i * row, row);
  };
  // L_md: a source sample (either task) against a target IrT sample.
  for (std::size_t i = 0; i < k; ++i) {
    const double lam = sample_lambda(alpha, rng);
    const std::size_t u = uniform_index(rng, 2 * k);
    const auto left = u < k ? span_row(sr, u) : span_row(sir, u - k);
    const auto right = span_row(tir, uniform_index(rng, k));
    mix_into(left, right, lam, std::span<float>(dst + (3 * k + i) * row, row));
    b.md_lams.push_back(lam);
  }
  // L_mf: a source ToI sample against an IrT sample of either domain.
  for (std::size_t i = 0; i < k; ++i) {
    const double lam = sample_lambda(alpha, rng);
    const std::size_t l = uniform_index(rng, k);
    const std::size_t u = uniform_index(rng, 2 * k);
    const auto right = u < k ? span_row(sir, u) : span_row(tir, u - k);
    mix_into(span_row(sr, l), right, lam, std::span<float>(dst + (4 * k + i) * row, row));
    b.mf_lams.push_back(lam);
    b.mf_left.push_back(tb.xs_r[l].get().class_index);
    b.mf_right.push_back(u < k ? tb.xs_ir[u].get().class_index
                               : tb.xt_ir[u - k].get().class_index);
  }
  return b;
}

template <typename T>
ObjectiveResult<T> adversarial_objective(ModelBundle<T>& model, const AdversarialBatch<T>& batch,
                                         const AdversarialWeights& weights, nn::Mode mode) {
  const std::size_t k = batch.k;
  const std::size_t n = batch.images.dim(0);
  if (n != k * (batch.has_mixes ? 5 : 3)) throw ShapeError("adversarial batch row count");
  const ModelOutputs<T> out = model.forward(batch.images, mode);

  ObjectiveResult<T> res;
  LossReport& rep = res.report;
  SaturationCounter sat;
  auto& g = res.grads;
  g.toi_logits = Tensor<T>(out.toi_logits.shape());
  g.irt_logits = Tensor<T>(out.irt_logits.shape());
  g.domain_logits = Tensor<T>(out.domain_logits.shape());

  const auto src = prob_range(out.domain_prob, 0, 2 * k);
  const auto tgt = prob_range(out.domain_prob, 2 * k, 3 * k);
  const DomainTerm dt = domain_loss_with_grad(src, tgt, &sat);
  rep.l_d = dt.value;
  for (std::size_t i = 0; i < 2 * k; ++i)
    g.domain_logits[i] += static_cast<T>(weights.d * dt.grad_source[i]);
  for (std::size_t i = 0; i < k; ++i)
    g.domain_logits[2 * k + i] += static_cast<T>(weights.d * dt.grad_target[i]);

  const TaskTerm<T> tt = task_loss(slice_rows(out.toi_logits, 0, k), batch.toi_targets,
                                   slice_rows(out.irt_logits, k, 3 * k), batch.irt_targets);
  rep.l_f = tt.value;
  add_rows(g.toi_logits, 0, tt.grad_toi, weights.f);
  add_rows(g.irt_logits, k, tt.grad_irt, weights.f);

  if (batch.has_mixes) {
    std::vector<MixedProbability> mp(k);
    for (std::size_t i = 0; i < k; ++i) mp[i] = {double(out.domain_prob[3 * k + i]), batch.md_lams[i]};
    const MixedDomainTerm md = mixed_domain_loss_with_grad(mp, &sat);
    rep.l_md = md.value;
    for (std::size_t i = 0; i < k; ++i)
      g.domain_logits[3 * k + i] += static_cast<T>(weights.md * md.grad[i]);

    const TaskTerm<T> mf =
        mixed_task_loss(slice_rows(out.toi_logits, 4 * k, 5 * k),
                        slice_rows(out.irt_logits, 4 * k, 5 * k), batch.mf_left, batch.mf_right,
                        batch.mf_lams);
    rep.l_mf = mf.value;
    add_rows(g.toi_logits, 4 * k, mf.grad_toi, weights.mf);
    add_rows(g.irt_logits, 4 * k, mf.grad_irt, weights.mf);
  }
  rep.l_adv = rep.l_d + rep.l_md + rep.l_f + rep.l_mf;
  rep.saturated = sat.count;
  return res;
}

// ---- contrastive objective ----

ContrastiveBatch<float> make_contrastive_batch(const TripletBatch& tb, double lam) {
  const ContrastiveTriplet t = build_contrastive_triplet(tb, lam);
  const Tensor<float>* parts[] = {&t.a, &t.b, &t.c};
  return {concat_rows<float>(parts), t.k(), lam};
}

template <typename T>
ObjectiveResult<T> contrastive_objective(ModelBundle<T>& model, const ContrastiveBatch<T>& batch,
                                         const ContrastiveConfig& cfg, double weight_con_f,
                                         double weight_con_d, nn::Mode mode) {
  const std::size_t k = batch.k;
  if (batch.images.dim(0) != 3 * k) throw ShapeError("contrastive batch row count");
  const ModelOutputs<T> out = model.forward(batch.images, mode);
  const ContrastiveTerms<T> terms =
      contrastive_losses(slice_rows(out.zf, 0, k), slice_rows(out.zf, k, 2 * k),
                         slice_rows(out.zd, k, 2 * k), slice_rows(out.zd, 2 * k, 3 * k), cfg);
  ObjectiveResult<T> res;
  res.report.l_con_f = terms.con_f.value;
  res.report.l_con_d = terms.con_d.value;
  res.grads.zf = Tensor<T>(out.zf.shape());
  res.grads.zd = Tensor<T>(out.zd.shape());
  add_rows(res.grads.zf, 0, terms.con_f.grad_anchors, weight_con_f);
  add_rows(res.grads.zf, k, terms.con_f.grad_positives, weight_con_f);
  add_rows(res.grads.zd, k, terms.con_d.grad_anchors, weight_con_d);
  add_rows(res.grads.zd, 2 * k, terms.con_d.grad_positives, weight_con_d);
  return res;
}

// ---- steps ----

LossReport adversarial_step(TrainState& state, const TripletBatch& triplet,
                            const TrainConfig& cfg) {
  const bool mixes = !cfg.ablation.disable_dual_mixup;
  const AdversarialBatch<float> batch =
      make_adversarial_batch(triplet, cfg.alpha, state.mixup_rng, mixes);
  const double lr = cfg.learning_rate_at(state.iteration);
  note_consumed(state, triplet);

  state.model.zero_grad();
  ObjectiveResult<float> res =
      adversarial_objective(state.model, batch, kAdversarialDescent, nn::Mode::kTrain);
  if (!finite(res.report)) abort_training("adversarial", state, res.report, lr);

  DomainPathPolicy policy;
  policy.reversal = GrlCoupling{cfg.grl_coefficient_at(state.iteration)};
  state.model.backward(res.grads, policy);
  state.optimizer.step(state.model.parameters(), lr);
  return res.report;
}

LossReport contrastive_step(TrainState& state, const TripletBatch& triplet,
                            const TrainConfig& cfg) {
  if (cfg.ablation.disable_contrastive) return {};
  const double lam = sample_lambda(cfg.alpha, state.mixup_rng);
  const ContrastiveBatch<float> batch = make_contrastive_batch(triplet, lam);
  const double lr = cfg.learning_rate_at(state.iteration);
  note_consumed(state, triplet);

  state.model.zero_grad();
  ObjectiveResult<float> res =
      contrastive_objective(state.model, batch, cfg.contrastive(), 1.0, 1.0, nn::Mode::kTrain);
  if (!finite(res.report)) abort_training("contrastive", state, res.report, lr);

  DomainPathPolicy policy;
  if (cfg.contrastive_through_grl) policy.reversal = GrlCoupling{cfg.grl_coefficient_at(state.iteration)};
  policy.propagate_into_shared = !cfg.freeze_shared_in_contrastive;
  state.model.backward(res.grads, policy);
  // The heads take no part in this objective; leaving them out also keeps
  // their Adam moments from decaying on zero gradients.
  state.optimizer.step(contrastive_parameters(state.model, !cfg.freeze_shared_in_contrastive), lr);
  return res.report;
}

namespace {

void persist(const TrainState& state, const TrainConfig& cfg, const TrainOptions& options) {
  if (!options.checkpoint_dir.empty()) {
    std::filesystem::create_directories(options.checkpoint_dir);
    save_checkpoint(options.checkpoint_dir / "checkpoint.dmcl", state, cfg);
  }
  if (!options.metrics_path.empty()) write_metrics_log(options.metrics_path, state.metrics_log);
}

}  // namespace

void run_training(TrainState& state, const TrainingView& data, const TrainConfig& cfg,
                  std::size_t until_iteration, const TrainOptions& options) {
  cfg.validate();
  while (state.iteration < until_iteration) {
    const TripletBatch tb = sample_triplet_batch(data, cfg.batch_k, state.data_rng);
    LossReport report;
    try {
      report = adversarial_step(state, tb, cfg);
      const LossReport con = contrastive_step(state, tb, cfg);
      report.l_con_d = con.l_con_d;
      report.l_con_f = con.l_con_f;
      report.saturated += con.saturated;
    } catch (const TrainingAborted&) {
      // The last interval checkpoint stays on disk untouched; only the
      // metrics gathered so far are flushed.
      if (!options.metrics_path.empty()) write_metrics_log(options.metrics_path, state.metrics_log);
      throw;
    }
    state.metrics_log.push_back({state.iteration, report});
    ++state.iteration;
    if (options.checkpoint_interval > 0 && state.iteration % options.checkpoint_interval == 0 &&
        state.iteration < until_iteration)
      persist(state, cfg, options);
    if (options.on_iteration) options.on_iteration(state);
  }
  persist(state, cfg, options);
}

TrainState train(const TrainingView& data, const ArchitectureConfig& arch, const TrainConfig& cfg,
                 const TrainOptions& options) {
  arch.validate();
  cfg.validate();
  const LabelSpaces& spaces = data.label_spaces();
  if (arch.head_class_counts[0] != spaces.toi_classes.size() ||
      arch.head_class_counts[1] != spaces.irt_classes.size())
    throw ConfigError("architecture head sizes (" + std::to_string(arch.head_class_counts[0]) +
                      ", " + std::to_string(arch.head_class_counts[1]) +
                      ") do not match the dataset label spaces (" +
                      std::to_string(spaces.toi_classes.size()) + ", " +
                      std::to_string(spaces.irt_classes.size()) + ")");
  if (!data.source_toi().empty()) {
    const LabeledImage& s = data.source_toi().front();
    if (s.height != arch.input_shape[0] || s.width != arch.input_shape[1])
      throw ConfigError("dataset images are " + std::to_string(s.height) + "x" +
                        std::to_string(s.width) + " but the architecture expects " +
                        std::to_string(arch.input_shape[0]) + "x" +
                        std::to_string(arch.input_shape[1]));
  }
  TrainState state = init_train_state(arch, cfg);
  run_training(state, data, cfg, cfg.total_iterations, options);
  return state;
}

std::size_t count_consumed(const TrainState& state, std::span<const LabeledImage> split) {
  std::size_t n = 0;
  for (const auto& s : split) n += state.consumed_ids.count(s.sample_id);
  return n;
}

// ---- persistence ----

Archive checkpoint_archive(const TrainState& state, const TrainConfig& cfg) {
  Archive a;
  auto& meta = a.metadata;
  meta["kind"] = "dmcl-checkpoint";
  meta["architecture"] = state.model.config();
  meta["train_config"] = cfg;
  meta["iteration"] = state.iteration;
  meta["data_rng"] = serialize_rng(state.data_rng);
  meta["mixup_rng"] = serialize_rng(state.mixup_rng);

  nlohmann::json steps = nlohmann::json::object();
  for (const auto& [name, slot] : state.optimizer.slots()) steps[name] = slot.steps;
  meta["adam_steps"] = steps;

  nlohmann::json log = nlohmann::json::array();
  for (const auto& m : state.metrics_log) {
    const LossReport& r = m.report;
    log.push_back({m.iteration, r.l_d, r.l_md, r.l_f, r.l_mf, r.l_adv, r.l_con_d, r.l_con_f,
                   r.saturated});
  }
  meta["metrics"] = log;
  std::vector<std::uint64_t> ids(state.consumed_ids.begin(), state.consumed_ids.end());
  std::sort(ids.begin(), ids.end());
  meta["consumed_ids"] = ids;

  auto& model = const_cast<ModelBundle<float>&>(state.model);
  for (const auto& np : model.parameters()) a.tensors.push_back({"model/" + np.name, np.param->value});
  for (const auto& [name, slot] : state.optimizer.slots()) a.tensors.push_back({"adam.m/" + name, slot.m});
  for (const auto& [name, slot] : state.optimizer.slots()) a.tensors.push_back({"adam.v/" + name, slot.v});
  return a;
}

LoadedCheckpoint checkpoint_from_archive(const Archive& a) {
  const auto& meta = a.metadata;
  if (meta.value("kind", std::string()) != "dmcl-checkpoint")
    throw DataError("archive is not a training checkpoint");
  try {
    LoadedCheckpoint out{TrainState{}, meta.at("train_config").get<TrainConfig>()};
    const auto arch = meta.at("architecture").get<ArchitectureConfig>();
    TrainState& s = out.state;
    s.model = build_model<float>(arch, 0);
    for (auto& np : s.model.parameters()) {
      const Tensor<float>& t = a.get("model/" + np.name);
      if (t.shape() != np.param->value.shape())
        throw DataError("checkpoint tensor model/" + np.name + " has shape " +
                        shape_string(t.shape()) + ", expected " +
                        shape_string(np.param->value.shape()));
      np.param->value = t;
    }
    s.iteration = meta.at("iteration").get<std::size_t>();
    s.data_rng = deserialize_rng(meta.at("data_rng").get<std::string>());
    s.mixup_rng = deserialize_rng(meta.at("mixup_rng").get<std::string>());
    for (const auto& [name, steps] : meta.at("adam_steps").items()) {
      auto& slot = s.optimizer.slots()[name];
      slot.steps = steps.get<std::size_t>();
      slot.m = a.get("adam.m/" + name);
      slot.v = a.get("adam.v/" + name);
    }
    for (const auto& row : meta.at("metrics")) {
      MetricsRecord m;
      m.iteration = row.at(0).get<std::size_t>();
      m.report = {row.at(1).get<double>(), row.at(2).get<double>(), row.at(3).get<double>(),
                  row.at(4).get<double>(), row.at(5).get<double>(), row.at(6).get<double>(),
                  row.at(7).get<double>(), row.at(8).get<std::size_t>()};
      s.metrics_log.push_back(m);
    }
    for (const auto& id : meta.at("consumed_ids")) s.consumed_ids.insert(id.get<std::uint64_t>());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& cfg) {
  write_archive(path, checkpoint_archive(state, cfg));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_archive(read_archive(path));
}

void write_metrics_log(const std::filesystem::path& path, const std::vector<MetricsRecord>& log) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp);
    out << "iteration\tl_d\tl_md\tl_f\tl_mf\tl_con_d\tl_con_f\n";
    char buf[256];
    for (const auto& m : log) {
      const LossReport& r = m.report;
      std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", m.iteration,
                    r.l_d, r.l_md, r.l_f, r.l_mf, r.l_con_d, r.l_con_f);
      out << buf;
    }
  }
  std::filesystem::rename(tmp, path);
}

std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.starts_with("iteration")) continue;
    std::istringstream ls(line);
    MetricsRecord m;
    LossReport& r = m.report;
    if (!(ls >> m.iteration >> r.l_d >> r.l_md >> r.l_f >> r.l_mf >> r.l_con_d >> r.l_con_f))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed metrics record");
    r.l_adv = r.l_d + r.l_md + r.l_f + r.l_mf;
    out.push_back(m);
  }
  return out;
}

void load_backbone_weights(ModelBundle<float>& model, const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  std::vector<nn::NamedParameter<float>> targets;
  for (auto& np : model.parameters())
    if (np.name.starts_with("g.") || np.name.starts_with("g_f.")) targets.push_back(np);
  if (a.tensors.size() != targets.size())
    throw DataError(path.string() + ": holds " + std::to_string(a.tensors.size()) +
                    " tensors, the backbone has " + std::to_string(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& src = a.tensors[i];
    auto& dst = *targets[i].param;
    if (src.tensor.shape() != dst.value.shape())
      throw DataError(path.string() + ": tensor " + std::to_string(i) + " (" + src.name +
                      ") has shape " + shape_string(src.tensor.shape()) + ", " + targets[i].name +
                      " needs " + shape_string(dst.value.shape()));
    dst.value = src.tensor;
  }
  auto& g_f = model.component("g_f");
  auto& g_d = model.component("g_d");
  g_d = g_f;
}

#define DMCL_TRAINER_INSTANTIATE(T)                                                             \
  template ObjectiveResult<T> adversarial_objective<T>(ModelBundle<T>&,                         \
                                                       const AdversarialBatch<T>&,              \
                                                       const AdversarialWeights&, nn::Mode);    \
  template ObjectiveResult<T> contrastive_objective<T>(ModelBundle<T>&, const ContrastiveBatch<T>&, \
                                                       const ContrastiveConfig&, double, double, \
                                                       nn::Mode);

DMCL_TRAINER_INSTANTIATE(float)
DMCL_TRAINER_INSTANTIATE(double)

}  // namespace dmcl
