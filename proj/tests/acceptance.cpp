// Acceptance runner: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.
//
//   1  desk-scale ablation ordering on X-NIST gray -> negative
//   2  finite-difference gradient oracle for every objective and the GRL
//   3  hand-computed loss values
//   4  mixup properties
//   5  trained G_F features beat random-init features on alignment and separation
//   6  determinism of a repeated run and an untouched evaluation split

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <set>

#include "CLI11.hpp"
#include "dmcl/domain_synth.hpp"
#include "dmcl/eval.hpp"
#include "dmcl/losses.hpp"
#include "dmcl/mixup.hpp"
#include "dmcl/presets.hpp"
#include "dmcl/xnist.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace dmcl;
using namespace dmcl::test;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

void note(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.pass = false;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += what;
  }
}

// ---- 2: gradient oracle ----

Outcome gradient_oracle() {
  Outcome o;
  double worst = 0.0;
  std::size_t coords = 0, kinks = 0;
  for (Objective obj : kAllObjectives) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      const GradCheck g = check_objective(obj, trial);
      worst = std::max(worst, g.relative_error);
      coords += g.coordinates;
      kinks += g.kinks_skipped;
      note(o, g.relative_error < 1e-4 && g.analytic_norm > 0.0 && g.coordinates >= 48,
           std::string(objective_name(obj)) + fmt(" trial %.0f rel err %.3g", double(trial), g.relative_error));
    }
  }
  if (o.pass)
    o.detail = fmt("7 objectives x 10 trials, worst relative error %.3g", worst) +
               fmt(", %.0f coordinates", double(coords)) + fmt(" (%.0f kinks redrawn)", double(kinks));
  return o;
}

// ---- 3: hand values ----

Outcome hand_values() {
  Outcome o;
  const double log2 = std::numbers::ln2;
  {
    Tensor<double> z({2, 3}, std::vector<double>{0.3, -1.2, 0.5, 0.3, -1.2, 0.5});
    const double v = nt_xent(z, z, ContrastiveConfig{0.5, 2, false}).value;
    note(o, std::abs(v - log2) < 1e-9, fmt("identical K=2 gives %.17g", v));
  }
  {
    Tensor<double> e({2, 2}, std::vector<double>{1, 0, 0, 1});
    const double v = nt_xent(e, e, ContrastiveConfig{1.0, 2, false}).value;
    note(o, std::abs(v - (log2 - 1.0)) < 1e-9, fmt("orthogonal negatives give %.17g", v));
  }
  for (double lam : {0.0, 0.25, 0.7, 1.0}) {
    const std::vector<MixedProbability> mp{{0.5, lam}, {0.5, lam}};
    const double v = mixed_domain_loss(mp);
    note(o, std::abs(v - std::log(0.5)) < 1e-12, fmt("mixed domain at lam %.2f gives %.17g", lam, v));
  }
  for (std::size_t c : {2u, 10u, 65u}) {
    Tensor<double> logits({3, c}, -0.4);
    const std::vector<std::size_t> t{0, c / 2, c - 1};
    const double v = cross_entropy(logits, t).value;
    note(o, std::abs(v - std::log(double(c))) < 1e-9, fmt("uniform CE over %.0f classes gives %.17g", double(c), v));
  }
  if (o.pass) o.detail = "log 2, log 2 - 1, log 0.5 and log C reproduced";
  return o;
}

// ---- 4: mixup properties ----

Outcome mixup_properties() {
  Outcome o;
  Rng rng(404);
  std::vector<RawImage> corpus;
  for (int i = 0; i < 20; ++i) {
    RawImage img(28, 28);
    for (auto& p : img.pixels) p = std::round(uniform01(rng) * 255.0) / 255.0;
    corpus.push_back(img);
  }
  double inv = 0.0;
  for (const auto& img : corpus) {
    const RawImage back = to_negative(to_negative(img));
    for (std::size_t i = 0; i < img.pixels.size(); ++i) inv = std::max(inv, std::abs(back.pixels[i] - img.pixels[i]));
  }
  note(o, inv < 1e-15, fmt("negative involution error %.3g", inv));

  double sym = 0.0;
  bool convex = true;
  for (int t = 0; t < 100; ++t) {
    const LabeledImage a = random_sample(28, 28, 1, Task::kToi, 0.0, "a", rng);
    const LabeledImage b = random_sample(28, 28, 2, Task::kIrt, 1.0, "b", rng);
    const double lam = uniform01(rng);
    const MixedSample ab = dual_mix(a, b, lam), ba = dual_mix(b, a, 1.0 - lam);
    for (std::size_t p = 0; p < ab.pixels.size(); ++p) {
      convex = convex && ab.pixels[p] >= std::min(a.pixels[p], b.pixels[p]) &&
               ab.pixels[p] <= std::max(a.pixels[p], b.pixels[p]);
      sym = std::max(sym, double(std::abs(ab.pixels[p] - ba.pixels[p])));
    }
    convex = convex && std::abs(ab.mixed_domain - (1.0 - lam)) < 1e-15;
  }
  note(o, convex, "dual_mix left the convex hull");
  note(o, sym <= 1e-6, fmt("dual_mix symmetry error %.3g", sym));

  const ZsdaDataset ds = tiny_dataset(32, 9, 28);
  double lam_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const TripletBatch tb = sample_triplet_batch(ds.training_view(), 8, rng);
    const double lam = uniform01(rng);
    const ContrastiveTriplet tr = build_contrastive_triplet(tb, lam);
    const Tensor<float> sr = stack_pixels(tb.xs_r), sir = stack_pixels(tb.xs_ir);
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < sr.size(); ++p) {
      const double d = double(sr[p]) - sir[p];
      num += (double(tr.b[p]) - tr.c[p]) * d;
      den += d * d;
    }
    lam_err = std::max(lam_err, std::abs(num / den - lam));
  }
  note(o, lam_err < 1e-6, fmt("shared lambda recovered with error %.3g", lam_err));

  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) sum += sample_lambda(1.0, rng);
  const double mean = sum / 10000;
  note(o, mean >= 0.48 && mean <= 0.52, fmt("Beta(1,1) mean %.4f", mean));
  if (o.pass)
    o.detail = fmt("involution exact, symmetry err %.2g, lambda err %.2g, ", sym, lam_err) +
               fmt("Beta(1,1) mean %.4f", mean);
  return o;
}

// ---- 1, 5, 6: desk-scale experiment ----

struct DeskResults {
  std::vector<AblationRow> rows;
  std::map<std::uint64_t, std::pair<DisentanglementScore, DisentanglementScore>> scores;  // trained, init
  std::string error;
};

DeskResults run_desk(const ZsdaDataset& ds, const Preset& p, std::size_t seeds, const fs::path& work,
                     bool reuse) {
  DeskResults out;
  AblationOptions opts;
  opts.output_dir = work / "ablation";
  opts.reuse_finished = reuse;
  opts.progress_interval = 250;
  opts.log = [](const std::string& line) { std::cerr << line << std::endl; };
  opts.on_run = [&](const AblationRow& row, const TrainState& state) {
    if (row.variant != Variant::kFull) return;
    TrainConfig cfg = p.train;
    cfg.seed = row.seed;
    ModelBundle<float> trained = state.model;
    ModelBundle<float> init = init_train_state(p.arch, cfg).model;
    const auto t = disentanglement_score(export_features(trained, ds, EmbeddingSource::kGF, 200, row.seed));
    const auto i = disentanglement_score(export_features(init, ds, EmbeddingSource::kGF, 200, row.seed));
    out.scores[row.seed] = {t, i};
    std::fprintf(stderr, "seed %llu G_F alignment %.4f (init %.4f), separation %.4f (init %.4f)\n",
                 static_cast<unsigned long long>(row.seed), t.domain_alignment, i.domain_alignment,
                 t.task_separation, i.task_separation);
  };
  fs::create_directories(opts.output_dir);
  out.rows = run_ablation_matrix(ds, p.arch, p.train, seeds, opts);
  std::ofstream(work / "table.tsv") << ablation_table(out.rows);
  std::ofstream(work / "summary.txt") << ablation_summary(out.rows);
  std::cerr << ablation_summary(out.rows);
  return out;
}

Outcome ablation_ordering(const DeskResults& r) {
  Outcome o;
  const auto m = variant_means(r.rows);
  const double full = m.at(Variant::kFull), nm = m.at(Variant::kNoDualMixup),
               nc = m.at(Variant::kNoContrastive), so = m.at(Variant::kSourceOnly);
  note(o, full - nm >= 0.05, fmt("full - no_dual_mixup = %.4f < 0.05", full - nm));
  note(o, full - nc >= 0.05, fmt("full - no_contrastive = %.4f < 0.05", full - nc));
  note(o, full - so >= 0.10, fmt("full - source_only = %.4f < 0.10", full - so));
  o.detail = fmt("means full %.4f, no_dual_mixup %.4f, no_contrastive %.4f", full, nm, nc) +
             fmt(", source_only %.4f", so) + (o.pass ? "" : " | " + o.detail);
  return o;
}

Outcome disentanglement(const DeskResults& r, std::size_t seeds) {
  Outcome o;
  std::string summary;
  for (const auto& [seed, pair] : r.scores) {
    const auto& [t, i] = pair;
    const bool ok = t.domain_alignment > i.domain_alignment && t.task_separation > i.task_separation;
    note(o, ok, "seed " + std::to_string(seed) + " did not improve");
    summary += "seed " + std::to_string(seed) +
               fmt(": align %.4f vs %.4f, sep %.4f", t.domain_alignment, i.domain_alignment, t.task_separation) +
               fmt(" vs %.4f; ", i.task_separation);
  }
  note(o, r.scores.size() == seeds, "missing seeds");
  o.detail = summary + (o.pass ? "" : "| " + o.detail);
  return o;
}

Outcome determinism(const DeskResults& r, const ZsdaDataset& ds, const Preset& p, const fs::path& work) {
  Outcome o;
  std::size_t touched = 0;
  for (const auto& row : r.rows) touched += row.eval_samples_consumed;
  note(o, touched == 0, std::to_string(touched) + " evaluation samples consumed in the matrix");

  const AblationRow& first = r.rows.front();
  TrainConfig cfg = variant_config(p.train, first.variant);
  cfg.seed = first.seed;
  TrainOptions topts;
  topts.checkpoint_dir = work / "rerun";
  TrainState rerun = train(ds.training_view(), p.arch, cfg, topts);
  const EvalResult e = evaluate(rerun.model, ds.evaluation_split());
  const std::size_t rerun_touched = count_consumed(rerun, ds.evaluation_split());
  note(o, rerun_touched == 0, std::to_string(rerun_touched) + " evaluation samples consumed in the rerun");
  note(o, e.target_toi_accuracy == first.result.target_toi_accuracy,
       fmt("rerun accuracy %.6f vs %.6f", e.target_toi_accuracy, first.result.target_toi_accuracy));

  const std::string run_id = std::string(to_string(first.variant)) + "_seed" + std::to_string(first.seed);
  const Archive a = read_archive(work / "ablation" / run_id / "checkpoint.dmcl");
  const Archive b = read_archive(work / "rerun" / "checkpoint.dmcl");
  note(o, serialize_archive(a) == serialize_archive(b), "rerun checkpoint differs from the original");
  o.detail = fmt("rerun accuracy %.6f == %.6f, checkpoints byte-identical, eval samples touched %.0f",
                 e.target_toi_accuracy, first.result.target_toi_accuracy, double(touched + rerun_touched)) +
             (o.pass ? "" : " | " + o.detail);
  return o;
}

void report(int id, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << o.detail << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DMCL acceptance criteria"};
  std::string xnist = "data/xnist", work = "acceptance_work";
  std::size_t seeds = 3;
  std::vector<int> only;
  bool fresh = false;
  app.add_option("--xnist", xnist, "directory with the X-NIST IDX files")->capture_default_str();
  app.add_option("--work", work, "directory for checkpoints and tables")->capture_default_str();
  app.add_option("--seeds", seeds, "seeds for the desk-scale matrix")->capture_default_str();
  app.add_option("--only", only, "run only these criteria");
  app.add_flag("--fresh", fresh, "retrain runs even when finished checkpoints are present");
  CLI11_PARSE(app, argc, argv);

  auto selected = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  std::map<int, Outcome> results;
  auto guarded = [&](int id, const std::function<Outcome()>& f) {
    if (!selected(id)) return;
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("error: ") + e.what()};
    }
    report(id, results[id]);
  };

  guarded(2, gradient_oracle);
  guarded(3, hand_values);
  guarded(4, mixup_properties);

  if (selected(1) || selected(5) || selected(6)) {
    const Preset& p = preset("desk");
    std::optional<ZsdaDataset> ds;
    DeskResults desk;
    try {
      ds = load_xnist(xnist, XnistOptions{});
      fs::create_directories(work);
      const auto t0 = std::chrono::steady_clock::now();
      desk = run_desk(*ds, p, seeds, work, !fresh);
      std::fprintf(stderr, "desk matrix: %.1f min\n",
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60);
    } catch (const std::exception& e) {
      desk.error = e.what();
    }
    auto need = [&](const std::function<Outcome()>& f) {
      return [&, f]() -> Outcome {
        if (!desk.error.empty()) return {false, "desk experiment failed: " + desk.error};
        return f();
      };
    };
    guarded(1, need([&] { return ablation_ordering(desk); }));
    guarded(5, need([&] { return disentanglement(desk, seeds); }));
    guarded(6, need([&] { return determinism(desk, *ds, p, work); }));
  }

  bool all = true;
  for (const auto& [id, o] : results) all = all && o.pass;
  return all ? 0 : 1;
}
