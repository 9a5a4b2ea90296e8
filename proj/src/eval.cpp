#include "dmcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dmcl/errors.hpp"
#include "dmcl/mixup.hpp"

namespace dmcl {

namespace {

constexpr std::uint64_t kExportStream = 0xfea7;

Tensor<float> stack_range(std::span<const LabeledImage> items, std::size_t begin,
                          std::size_t end) {
  SampleRefs refs;
  for (std::size_t i = begin; i < end; ++i) refs.push_back(std::cref(items[i]));
  return stack_pixels(refs);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

// ---- accuracy ----

EvalResult accuracy_from_logits(const Tensor<float>& logits, std::span<const std::size_t> truth) {
  if (truth.empty()) throw DataError("evaluation split is empty");
  if (logits.rank() != 2 || logits.dim(0) != truth.size())
    throw ShapeError("accuracy: logits " + shape_string(logits.shape()) + " for " +
                     std::to_string(truth.size()) + " labels");
  EvalResult r;
  std::map<std::size_t, std::size_t> correct;
  const std::size_t c = logits.dim(1);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    ++r.per_class_count[truth[i]];
    correct[truth[i]] += 0;
    if (best == truth[i]) {
      ++correct[truth[i]];
      ++r.n_correct;
    }
  }
  r.n_samples = truth.size();
  r.target_toi_accuracy = double(r.n_correct) / double(r.n_samples);
  for (const auto& [cls, n] : r.per_class_count)
    r.per_class_accuracy[cls] = double(correct[cls]) / double(n);
  return r;
}

EvalResult evaluate(ModelBundle<float>& model, std::span<const LabeledImage> eval_split,
                    std::size_t batch_size) {
  if (eval_split.empty()) throw DataError("evaluation split is empty");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> truth;
  for (const auto& s : eval_split) {
    if (s.task != Task::kToi || s.domain_label != 1.0)
      throw DataError("evaluation sample " + s.path + " is not a target-domain ToI sample");
    truth.push_back(s.class_index);
  }
  const std::size_t classes = model.config().head_class_counts[0];
  Tensor<float> logits({eval_split.size(), classes});
  for (std::size_t b = 0; b < eval_split.size(); b += batch_size) {
    const std::size_t e = std::min(eval_split.size(), b + batch_size);
    const ModelOutputs<float> out = model.forward(stack_range(eval_split, b, e), nn::Mode::kEval);
    std::copy(out.toi_logits.data(), out.toi_logits.data() + out.toi_logits.size(),
              logits.data() + b * classes);
  }
  return accuracy_from_logits(logits, truth);
}

std::string config_digest(const ArchitectureConfig& arch, const TrainConfig& cfg) {
  const nlohmann::json j{{"architecture", arch}, {"train_config", cfg}};
  return hex64(sample_id_for(j.dump()));
}

// ---- ablation ----

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoDualMixup: return "no_dual_mixup";
    case Variant::kNoContrastive: return "no_contrastive";
    case Variant::kSourceOnly: return "source_only";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected full, no_dual_mixup, no_contrastive, source_only)");
}

TrainConfig variant_config(const TrainConfig& base, Variant v) {
  TrainConfig c = base;
  c.ablation = {};
  switch (v) {
    case Variant::kFull: break;
    case Variant::kNoDualMixup: c.ablation.disable_dual_mixup = true; break;
    case Variant::kNoContrastive: c.ablation.disable_contrastive = true; break;
    case Variant::kSourceOnly:
      c.ablation = {true, true};
      c.grl_coefficient = 0.0;
      break;
  }
  return c;
}

std::vector<AblationRow> run_ablation_matrix(const ZsdaDataset& dataset,
                                             const ArchitectureConfig& arch,
                                             const TrainConfig& base, std::size_t n_seeds,
                                             const AblationOptions& options) {
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  std::vector<AblationRow> rows;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    for (Variant v : options.variants) {
      TrainConfig cfg = variant_config(base, v);
      cfg.seed = base.seed + s;
      const std::string run_id = std::string(to_string(v)) + "_seed" + std::to_string(cfg.seed);
      TrainOptions topts;
      if (!options.output_dir.empty()) {
        topts.checkpoint_dir = options.output_dir / run_id;
        std::filesystem::create_directories(topts.checkpoint_dir);
        topts.metrics_path = topts.checkpoint_dir / "metrics.tsv";
      }
      try {
        TrainState state;
        bool reused = false;
        const auto ckpt = topts.checkpoint_dir / "checkpoint.dmcl";
        if (options.reuse_finished && !options.output_dir.empty() && std::filesystem::exists(ckpt)) {
          LoadedCheckpoint prior = load_checkpoint(ckpt);
          if (prior.state.iteration == cfg.total_iterations &&
              config_digest(prior.state.model.config(), prior.config) == config_digest(arch, cfg)) {
            state = std::move(prior.state);
            reused = true;
          }
        }
        if (!reused) {
          if (options.log && options.progress_interval > 0)
            topts.on_iteration = [&](const TrainState& st) {
              if (st.iteration % options.progress_interval != 0) return;
              const LossReport& r = st.metrics_log.back().report;
              char buf[200];
              std::snprintf(buf, sizeof buf, "%s: iter %zu/%zu l_d %.4f l_f %.4f l_con_f %.4f",
                            run_id.c_str(), st.iteration, cfg.total_iterations, r.l_d, r.l_f,
                            r.l_con_f);
              options.log(buf);
            };
          state = train(dataset.training_view(), arch, cfg, topts);
        }
        AblationRow row{v, cfg.seed, evaluate(state.model, dataset.evaluation_split()),
                        count_consumed(state, dataset.evaluation_split())};
        row.result.run_metadata = {cfg.seed, config_digest(arch, cfg), run_id};
        if (options.log) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s: accuracy %.4f%s", run_id.c_str(),
                        row.result.target_toi_accuracy, reused ? " (finished run reused)" : "");
          options.log(buf);
        }
        if (options.on_run) options.on_run(row, state);
        rows.push_back(std::move(row));
      } catch (const Error& e) {
        throw Error("ablation run " + run_id + " failed: " + e.what());
      }
    }
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant\tseed\taccuracy\n";
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.result.target_toi_accuracy);
    os << to_string(r.variant) << '\t' << r.seed << '\t' << buf << '\n';
  }
  return os.str();
}

std::map<Variant, double> variant_means(const std::vector<AblationRow>& rows) {
  std::map<Variant, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    acc[r.variant].first += r.result.target_toi_accuracy;
    ++acc[r.variant].second;
  }
  std::map<Variant, double> out;
  for (const auto& [v, p] : acc) out[v] = p.first / double(p.second);
  return out;
}

std::string ablation_summary(const std::vector<AblationRow>& rows) {
  std::map<Variant, std::vector<double>> by;
  for (const auto& r : rows) by[r.variant].push_back(r.result.target_toi_accuracy);
  std::ostringstream os;
  os << "variant          runs  mean_acc  std_acc  role\n";
  char buf[128];
  for (const auto& [v, xs] : by) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / double(xs.size() - 1)) : 0.0;
    std::snprintf(buf, sizeof buf, "%-16s %4zu  %8.4f  %7.4f  %s\n",
                  std::string(to_string(v)).c_str(), xs.size(), mean, sd,
                  v == Variant::kFull ? "method" : v == Variant::kSourceOnly ? "baseline" : "ablation");
    os << buf;
  }
  return os.str();
}

// ---- feature export ----

std::string_view to_string(EmbeddingSource s) { return s == EmbeddingSource::kGF ? "G_F" : "G_D"; }

EmbeddingSource parse_embedding_source(std::string_view name) {
  if (name == "G_F" || name == "g_f" || name == "GF") return EmbeddingSource::kGF;
  if (name == "G_D" || name == "g_d" || name == "GD") return EmbeddingSource::kGD;
  throw ConfigError("unknown embedding source '" + std::string(name) + "' (expected G_F or G_D)");
}

FeatureDump export_features(ModelBundle<float>& model, const ZsdaDataset& dataset,
                            EmbeddingSource source, std::size_t samples_per_split,
                            std::uint64_t seed) {
  if (samples_per_split == 0) throw ConfigError("samples_per_split must be positive");
  FeatureDump dump;
  dump.source = source;
  const Split order[] = {Split::kSourceIrt, Split::kSourceToi, Split::kTargetIrt,
                         Split::kTargetToiEval};
  for (std::size_t si = 0; si < 4; ++si) {
    const auto& items = dataset.split(order[si]);
    if (items.size() < samples_per_split)
      throw DataError("split " + std::string(to_string(order[si])) + " has " +
                      std::to_string(items.size()) + " samples, " +
                      std::to_string(samples_per_split) + " requested");
    std::vector<std::size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, kExportStream, si));
    for (std::size_t i = 0; i < samples_per_split; ++i)
      std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    idx.resize(samples_per_split);

    constexpr std::size_t kBatch = 256;
    for (std::size_t b = 0; b < idx.size(); b += kBatch) {
      SampleRefs refs;
      for (std::size_t i = b; i < std::min(idx.size(), b + kBatch); ++i)
        refs.push_back(std::cref(items[idx[i]]));
      const ModelOutputs<float> out = model.forward(stack_pixels(refs), nn::Mode::kEval);
      const Tensor<float>& z = source == EmbeddingSource::kGF ? out.zf : out.zd;
      const std::size_t m = z.stride0();
      for (std::size_t r = 0; r < refs.size(); ++r) {
        const LabeledImage& s = refs[r];
        FeatureRow row;
        row.embedding.assign(z.data() + r * m, z.data() + (r + 1) * m);
        row.task = s.task;
        row.domain = s.domain_label;
        row.class_index = s.class_index;
        row.split = std::string(to_string(order[si]));
        dump.rows.push_back(std::move(row));
      }
    }
  }
  return dump;
}

void write_feature_dump(const std::filesystem::path& path, const FeatureDump& dump) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t m = dump.dim();
  for (std::size_t i = 0; i < m; ++i) out << "dim_" << i << ',';
  out << "task,domain,class,split\n";
  char buf[40];
  for (const auto& r : dump.rows) {
    if (r.embedding.size() != m) throw ShapeError("feature rows have unequal dimension");
    for (double v : r.embedding) {
      std::snprintf(buf, sizeof buf, "%.9g,", v);
      out << buf;
    }
    out << to_string(r.task) << ',' << (r.domain == 0.0 ? 0 : 1) << ',' << r.class_index << ','
        << r.split << '\n';
  }
}

FeatureDump read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty feature dump");
  const std::size_t cols = std::count(line.begin(), line.end(), ',') + 1;
  if (cols < 5 || !line.ends_with("task,domain,class,split"))
    throw DataError(path.string() + ": unrecognized header");
  const std::size_t m = cols - 4;
  FeatureDump dump;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != cols) throw DataError(where + ": expected " + std::to_string(cols) + " fields");
    FeatureRow row;
    try {
      for (std::size_t i = 0; i < m; ++i) row.embedding.push_back(std::stod(f[i]));
      row.task = parse_task(f[m]);
      row.domain = std::stod(f[m + 1]);
      row.class_index = std::stoul(f[m + 2]);
    } catch (const std::logic_error&) {
      throw DataError(where + ": malformed field");
    }
    row.split = f[m + 3];
    dump.rows.push_back(std::move(row));
  }
  return dump;
}

DisentanglementScore disentanglement_score(const FeatureDump& dump) {
  const std::size_t m = dump.dim();
  if (m == 0) throw DataError("feature dump is empty");
  bool seen[2][2] = {};  // [task][domain]
  for (const auto& r : dump.rows) {
    if (r.embedding.size() != m) throw ShapeError("feature rows have unequal dimension");
    seen[r.task == Task::kIrt][r.domain != 0.0] = true;
  }
  const bool both_tasks = (seen[0][0] || seen[0][1]) && (seen[1][0] || seen[1][1]);
  const bool both_domains = (seen[0][0] || seen[1][0]) && (seen[0][1] || seen[1][1]);
  if (!both_tasks || !both_domains)
    throw DataError("feature dump needs both tasks and both domains");

  DisentanglementScore score;

  // Alignment: per task with rows in both domains.
  double align = 0.0;
  std::size_t tasks_used = 0;
  for (int t = 0; t < 2; ++t) {
    if (!seen[t][0] || !seen[t][1]) continue;
    std::vector<double> c[2] = {std::vector<double>(m), std::vector<double>(m)};
    std::size_t n[2] = {0, 0};
    for (const auto& r : dump.rows) {
      if ((r.task == Task::kIrt) != bool(t)) continue;
      const int d = r.domain != 0.0;
      ++n[d];
      for (std::size_t i = 0; i < m; ++i) c[d][i] += r.embedding[i];
    }
    double dot = 0.0, n0 = 0.0, n1 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      c[0][i] /= double(n[0]);
      c[1][i] /= double(n[1]);
      dot += c[0][i] * c[1][i];
      n0 += c[0][i] * c[0][i];
      n1 += c[1][i] * c[1][i];
    }
    double cos;
    if (c[0] == c[1]) cos = 1.0;
    else if (n0 == 0.0 || n1 == 0.0) cos = 0.0;
    else cos = dot / (std::sqrt(n0) * std::sqrt(n1));
    align += cos;
    ++tasks_used;
  }
  // Only reachable when each task appears in a single domain.
  if (tasks_used == 0) throw DataError("no task has rows in both domains");
  score.domain_alignment = align / double(tasks_used);

  // Separation over all row pairs.
  double within = 0.0, between = 0.0;
  std::size_t n_within = 0, n_between = 0;
  const auto& rows = dump.rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double diff = rows[i].embedding[k] - rows[j].embedding[k];
        d2 += diff * diff;
      }
      if (rows[i].task == rows[j].task) {
        within += std::sqrt(d2);
        ++n_within;
      } else {
        between += std::sqrt(d2);
        ++n_between;
      }
    }
  }
  const double a = n_within ? within / double(n_within) : 0.0;
  const double b = between / double(n_between);
  const double denom = std::max(a, b);
  if (denom == 0.0) {
    score.task_separation = 0.0;
    score.degenerate = true;
  } else {
    score.task_separation = (b - a) / denom;
  }
  return score;
}

}  // namespace dmcl
