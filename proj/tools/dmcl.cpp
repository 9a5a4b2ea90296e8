// dmcl command-line driver.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dmcl/datasets.hpp"
#include "dmcl/domain_synth.hpp"
#include "dmcl/errors.hpp"
#include "dmcl/eval.hpp"
#include "dmcl/presets.hpp"
#include "dmcl/trainer.hpp"
#include "dmcl/xnist.hpp"

namespace fs = std::filesystem;
using namespace dmcl;

namespace {

// Dataset source shared by train / eval / ablate / export-features.
struct DataArgs {
  std::string manifest;
  std::string xnist;
  std::size_t per_split = 2000;
  std::size_t eval_size = 2000;
  std::string source_domain = "G";
  std::string target_domain = "N";
  std::uint64_t data_seed = 0;

  void add(CLI::App* app) {
    auto* m = app->add_option("--data", manifest, "dataset root containing the split manifests");
    auto* x = app->add_option("--xnist", xnist, "directory with X-NIST IDX files (built in memory)");
    m->excludes(x);
    app->add_option("--per-split", per_split, "X-NIST images per training split")->capture_default_str();
    app->add_option("--eval-size", eval_size, "X-NIST target ToI evaluation images")->capture_default_str();
    app->add_option("--source-domain", source_domain, "X-NIST source domain (G, C, E, N)")->capture_default_str();
    app->add_option("--target-domain", target_domain, "X-NIST target domain (G, C, E, N)")->capture_default_str();
    app->add_option("--data-seed", data_seed, "X-NIST sampling and synthesis seed")->capture_default_str();
  }

  ZsdaDataset load() const {
    if (!manifest.empty()) return load_manifest(manifest);
    if (xnist.empty()) throw ConfigError("one of --data or --xnist is required");
    XnistOptions o;
    o.per_split = per_split;
    o.eval_size = eval_size;
    o.source = parse_domain_tag(source_domain);
    o.target = parse_domain_tag(target_domain);
    o.seed = data_seed;
    return load_xnist(xnist, o);
  }
};

// Architecture and training configuration: preset, optional JSON file, then
// individual flags, each layer overriding the previous one.
struct ConfigArgs {
  std::string preset_name = "desk";
  std::string config_file;
  ArchitectureConfig arch;
  TrainConfig train;
  std::string backbone;
  std::vector<std::size_t> channels_g, channels_branch;
  std::string pretrained;
  bool disable_dual_mixup = false, disable_contrastive = false;

  void add(CLI::App* app) {
    app->add_option("--preset", preset_name, "configuration preset (desk, xnist-full, office-home)")
        ->capture_default_str();
    app->add_option("--config", config_file,
                    "JSON file with \"architecture\" and/or \"train_config\" objects");
    app->add_option("--backbone", backbone, "SMALL_CNN or PRETRAINED_RESNET50_SPLIT");
    app->add_option("--channels-g", channels_g, "three conv widths of G")->expected(3);
    app->add_option("--channels-branch", channels_branch, "three conv widths of G_F and G_D")
        ->expected(3);
    app->add_option("--pretrained-weights", pretrained, "backbone parameter archive");
    app->add_option("--batch-k", train.batch_k, "samples per split per batch (K)");
    app->add_option("--iterations", train.total_iterations, "alternation pairs to run");
    app->add_option("--lr", train.learning_rate, "base learning rate");
    app->add_option("--lr-decay-factor", train.lr_decay_factor, "learning rate multiplier at the decay point");
    app->add_option("--lr-decay-at", train.lr_decay_at_fraction, "decay point as a fraction of the run");
    app->add_option("--alpha", train.alpha, "Beta(alpha, alpha) parameter for mixup");
    app->add_option("--grl", train.grl_coefficient, "gradient reversal coefficient");
    app->add_option("--grl-ramp", train.grl_ramp_iterations, "iterations over which the GRL ramps up");
    app->add_option("--temperature", train.temperature, "NT-Xent temperature");
    app->add_option("--seed", train.seed, "training seed");
    app->add_flag("--include-positive", train.include_positive_in_denominator,
                  "keep the positive pair in the NT-Xent denominator");
    app->add_flag("--contrastive-through-grl", train.contrastive_through_grl,
                  "reverse the domain-side contrastive gradient into G");
    app->add_flag("--freeze-shared-in-contrastive", train.freeze_shared_in_contrastive,
                  "keep G fixed during the contrastive step");
    app->add_flag("--disable-dual-mixup", disable_dual_mixup, "drop L_md and L_mf");
    app->add_flag("--disable-contrastive", disable_contrastive, "skip the contrastive step");
  }

  // Values left at their member defaults by CLI11 are replaced by the preset
  // unless the flag was given, hence the app lookup.
  void resolve(const CLI::App& app) {
    const Preset& p = preset(preset_name);
    ArchitectureConfig a = p.arch;
    TrainConfig t = p.train;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot open " + config_file);
      nlohmann::json j;
      try {
        in >> j;
        if (j.contains("architecture")) {
          nlohmann::json merged = a;
          merged.merge_patch(j["architecture"]);
          a = merged.get<ArchitectureConfig>();
        }
        if (j.contains("train_config")) {
          nlohmann::json merged = t;
          merged.merge_patch(j["train_config"]);
          t = merged.get<TrainConfig>();
        }
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(config_file + ": " + e.what());
      }
    }
    auto given = [&](const char* flag) { return app.count(flag) > 0; };
    if (given("--backbone")) a.backbone = parse_backbone(backbone);
    if (given("--channels-g")) std::copy(channels_g.begin(), channels_g.end(), a.conv_channels_g.begin());
    if (given("--channels-branch")) {
      std::copy(channels_branch.begin(), channels_branch.end(), a.conv_channels_branch.begin());
      if (a.backbone == Backbone::kSmallCnn) a.embedding_dims = {channels_branch[2], channels_branch[2]};
    }
    if (given("--pretrained-weights")) a.pretrained_weights = pretrained;
    if (given("--batch-k")) t.batch_k = train.batch_k;
    if (given("--iterations")) t.total_iterations = train.total_iterations;
    if (given("--lr")) t.learning_rate = train.learning_rate;
    if (given("--lr-decay-factor")) t.lr_decay_factor = train.lr_decay_factor;
    if (given("--lr-decay-at")) t.lr_decay_at_fraction = train.lr_decay_at_fraction;
    if (given("--alpha")) t.alpha = train.alpha;
    if (given("--grl")) t.grl_coefficient = train.grl_coefficient;
    if (given("--grl-ramp")) t.grl_ramp_iterations = train.grl_ramp_iterations;
    if (given("--temperature")) t.temperature = train.temperature;
    if (given("--seed")) t.seed = train.seed;
    if (given("--include-positive")) t.include_positive_in_denominator = true;
    if (given("--contrastive-through-grl")) t.contrastive_through_grl = true;
    if (given("--freeze-shared-in-contrastive")) t.freeze_shared_in_contrastive = true;
    if (disable_dual_mixup) t.ablation.disable_dual_mixup = true;
    if (disable_contrastive) t.ablation.disable_contrastive = true;
    arch = a;
    train = t;
  }

  void fit_to(const ZsdaDataset& ds) {
    arch.input_shape[0] = ds.height();
    arch.input_shape[1] = ds.width();
    arch.head_class_counts = {ds.label_spaces().toi_classes.size(),
                              ds.label_spaces().irt_classes.size()};
  }
};

void print_eval(const EvalResult& r, std::ostream& os) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "target_toi_accuracy\t%.6f\nn_samples\t%zu\nn_correct\t%zu\n",
                r.target_toi_accuracy, r.n_samples, r.n_correct);
  os << buf;
  for (const auto& [cls, acc] : r.per_class_accuracy) {
    std::snprintf(buf, sizeof buf, "class_%zu\t%.6f\t%zu\n", cls, acc, r.per_class_count.at(cls));
    os << buf;
  }
}

struct Corpus {
  std::vector<RawImage> images;
  std::vector<std::size_t> classes;
};

bool is_index(const std::string& name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// PGM files directly under `input` (class `fallback_class`) or under numeric
// class subdirectories, or an IDX image file with an optional IDX label file.
Corpus read_corpus(const fs::path& input, const fs::path& labels, std::size_t fallback_class,
                   std::size_t limit) {
  Corpus out;
  auto full = [&] { return limit && out.images.size() >= limit; };
  if (fs::is_directory(input)) {
    std::vector<std::pair<std::size_t, fs::path>> files;
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_directory() && is_index(e.path().filename().string())) {
        const std::size_t cls = std::stoul(e.path().filename().string());
        for (const auto& f : fs::directory_iterator(e.path()))
          if (f.path().extension() == ".pgm") files.emplace_back(cls, f.path());
      } else if (e.path().extension() == ".pgm") {
        files.emplace_back(fallback_class, e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& [cls, f] : files) {
      if (full()) break;
      RawImage img = read_pgm(f);
      img.source_id = fs::relative(f, input).generic_string();
      out.images.push_back(std::move(img));
      out.classes.push_back(cls);
    }
  } else {
    const IdxImages idx = read_idx_images(input);
    std::vector<std::uint8_t> lab;
    if (!labels.empty()) {
      lab = read_idx_labels(labels);
      if (lab.size() != idx.count) throw DataError("label file and image file have different counts");
    }
    const std::size_t n = limit ? std::min(limit, idx.count) : idx.count;
    for (std::size_t i = 0; i < n; ++i) {
      out.images.push_back(idx.image(i, std::to_string(i)));
      out.classes.push_back(lab.empty() ? fallback_class : lab[i]);
    }
  }
  if (out.images.empty()) throw DataError("no images found in " + input.string());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DMCL zero-shot domain adaptation toolkit"};
  app.require_subcommand(1);

  // synthesize
  auto* syn = app.add_subcommand("synthesize", "render a gray corpus into one domain");
  std::string syn_in, syn_out, syn_domain = "N", syn_patch_dir, syn_blend = "absdiff";
  std::string syn_labels, syn_task = "TOI";
  std::uint64_t syn_seed = 0;
  std::size_t syn_limit = 0, syn_patch_size = 0, syn_class = 0;
  SynthOptions syn_opts;
  syn->add_option("--input", syn_in, "directory of PGM images or an IDX image file")->required();
  syn->add_option("--output", syn_out, "output directory for PPM images")->required();
  syn->add_option("--domain", syn_domain, "G, C, E or N")->capture_default_str();
  syn->add_option("--seed", syn_seed, "texture seed (color domain)")->capture_default_str();
  syn->add_option("--labels", syn_labels, "IDX label file matching an IDX --input");
  syn->add_option("--class", syn_class, "class index for unlabeled PGM files")->capture_default_str();
  syn->add_option("--task", syn_task, "task tag written to the manifest (TOI or IRT)")->capture_default_str();
  syn->add_option("--limit", syn_limit, "process at most this many images (0: all)");
  syn->add_option("--patch-dir", syn_patch_dir, "texture images for the color domain");
  syn->add_option("--patch-size", syn_patch_size, "texture crop size (0: image size)");
  syn->add_option("--blend", syn_blend, "color blend: absdiff or convex")->capture_default_str();
  syn->add_option("--canny-low", syn_opts.canny.low_threshold)->capture_default_str();
  syn->add_option("--canny-high", syn_opts.canny.high_threshold)->capture_default_str();
  syn->add_option("--canny-sigma", syn_opts.canny.sigma)->capture_default_str();

  // prepare-xnist
  auto* prep = app.add_subcommand("prepare-xnist", "write an X-NIST task as a manifest dataset");
  DataArgs prep_data;
  std::string prep_out;
  prep->add_option("--xnist", prep_data.xnist, "directory with X-NIST IDX files")->required();
  prep->add_option("--output", prep_out, "dataset root to create")->required();
  prep->add_option("--per-split", prep_data.per_split)->capture_default_str();
  prep->add_option("--eval-size", prep_data.eval_size)->capture_default_str();
  prep->add_option("--source-domain", prep_data.source_domain)->capture_default_str();
  prep->add_option("--target-domain", prep_data.target_domain)->capture_default_str();
  prep->add_option("--data-seed", prep_data.data_seed)->capture_default_str();

  // validate-data
  auto* val = app.add_subcommand("validate-data", "check dataset invariants");
  std::string val_root;
  val->add_option("--data", val_root, "dataset root")->required();

  // train
  auto* tr = app.add_subcommand("train", "train one model");
  DataArgs tr_data;
  ConfigArgs tr_cfg;
  std::string tr_ckpt_dir, tr_metrics, tr_resume;
  std::size_t tr_interval = 0;
  bool tr_quiet = false;
  tr_data.add(tr);
  tr_cfg.add(tr);
  tr->add_option("--checkpoint-dir", tr_ckpt_dir, "directory for checkpoint.dmcl")->required();
  tr->add_option("--metrics", tr_metrics, "metrics log path (default: <checkpoint-dir>/metrics.tsv)");
  tr->add_option("--checkpoint-interval", tr_interval, "iterations between checkpoints (0: end only)");
  tr->add_option("--resume", tr_resume, "continue from this checkpoint");
  tr->add_flag("--quiet", tr_quiet, "no progress output");

  // eval
  auto* ev = app.add_subcommand("eval", "target-ToI accuracy of a checkpoint");
  DataArgs ev_data;
  std::string ev_ckpt, ev_json;
  ev_data.add(ev);
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--json", ev_json, "also write the result as JSON");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate the ablation matrix");
  DataArgs ab_data;
  ConfigArgs ab_cfg;
  std::size_t ab_seeds = 3;
  std::vector<std::string> ab_variants;
  std::string ab_out;
  ab_data.add(ab);
  ab_cfg.add(ab);
  ab->add_option("--seeds", ab_seeds, "seeds per variant")->capture_default_str();
  ab->add_option("--variants", ab_variants, "subset of full, no_dual_mixup, no_contrastive, source_only");
  ab->add_option("--output", ab_out, "directory for runs, table.tsv and summary.txt")->required();
  bool ab_reuse = false;
  std::size_t ab_progress = 250;
  ab->add_flag("--reuse", ab_reuse, "load finished runs with a matching configuration from --output");
  ab->add_option("--progress", ab_progress, "iterations between progress lines (0: none)")->capture_default_str();

  // export-features
  auto* ex = app.add_subcommand("export-features", "dump G_F or G_D embeddings");
  DataArgs ex_data;
  std::string ex_ckpt, ex_out, ex_source = "G_F";
  std::size_t ex_samples = 200;
  std::uint64_t ex_seed = 0;
  bool ex_score = false;
  ex_data.add(ex);
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint file")->required();
  ex->add_option("--output", ex_out, "feature dump path (CSV)")->required();
  ex->add_option("--source", ex_source, "G_F or G_D")->capture_default_str();
  ex->add_option("--samples-per-split", ex_samples)->capture_default_str();
  ex->add_option("--seed", ex_seed, "row sampling seed")->capture_default_str();
  ex->add_flag("--score", ex_score, "print the disentanglement score of the dump");

  CLI11_PARSE(app, argc, argv);

  try {
    if (syn->parsed()) {
      const Corpus corpus = read_corpus(syn_in, syn_labels, syn_class, syn_limit);
      const Task task = parse_task(syn_task);
      syn_opts.patches.directory = syn_patch_dir;
      syn_opts.patches.mode = syn_patch_dir.empty() ? PatchMode::kProcedural : PatchMode::kExternalDirectory;
      syn_opts.patches.patch_size = syn_patch_size;
      if (syn_blend == "convex") syn_opts.blend = ColorBlend::kConvex;
      else if (syn_blend != "absdiff") throw ConfigError("unknown blend '" + syn_blend + "'");
      const DomainTag tag = parse_domain_tag(syn_domain);
      const auto images = synthesize_domain(corpus.images, tag, syn_seed, syn_opts);
      fs::create_directories(syn_out);
      // One record per image: file, class index, task tag, domain tag.
      std::ofstream manifest(fs::path(syn_out) / "manifest.tsv");
      char name[32];
      for (std::size_t i = 0; i < images.size(); ++i) {
        std::snprintf(name, sizeof name, "%06zu.ppm", i);
        write_ppm(fs::path(syn_out) / name, images[i].image);
        manifest << name << '\t' << corpus.classes[i] << '\t' << to_string(task) << '\t'
                 << to_string(tag) << '\n';
      }
      std::cout << "wrote " << images.size() << " " << to_string(tag) << " images to " << syn_out
                << "\n";
      return 0;
    }

    if (prep->parsed()) {
      const ZsdaDataset ds = prep_data.load();
      save_dataset(prep_out, ds);
      std::cout << "wrote dataset to " << prep_out << "\n";
      return 0;
    }

    if (val->parsed()) {
      bool ok = true;
      std::vector<SplitCheck> checks;
      try {
        checks = check_invariants(load_manifest(val_root));
      } catch (const DataError& e) {
        checks.push_back({"load", false, e.what()});
      }
      for (const auto& c : checks) {
        std::cout << (c.ok ? "ok  " : "FAIL") << "  " << c.name;
        if (!c.detail.empty()) std::cout << "  " << c.detail;
        std::cout << "\n";
        ok = ok && c.ok;
      }
      return ok ? 0 : 1;
    }

    if (tr->parsed()) {
      const ZsdaDataset ds = tr_data.load();
      TrainOptions opts;
      opts.checkpoint_dir = tr_ckpt_dir;
      opts.checkpoint_interval = tr_interval;
      opts.metrics_path = tr_metrics.empty() ? fs::path(tr_ckpt_dir) / "metrics.tsv" : fs::path(tr_metrics);
      fs::create_directories(tr_ckpt_dir);
      const auto start = std::chrono::steady_clock::now();
      std::size_t total = 0;
      opts.on_iteration = [&](const TrainState& s) {
        if (tr_quiet || (s.iteration % 50 != 0 && s.iteration != total)) return;
        const LossReport& r = s.metrics_log.back().report;
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::fprintf(stderr, "iter %5zu/%zu  l_d %.4f  l_md %.4f  l_f %.4f  l_mf %.4f  l_con_d %.4f  l_con_f %.4f  (%.1fs)\n",
                     s.iteration, total, r.l_d, r.l_md, r.l_f, r.l_mf, r.l_con_d, r.l_con_f, secs);
      };
      TrainState state;
      TrainConfig cfg;
      if (!tr_resume.empty()) {
        LoadedCheckpoint ck = load_checkpoint(tr_resume);
        state = std::move(ck.state);
        cfg = ck.config;
        if (tr->count("--iterations")) cfg.total_iterations = tr_cfg.train.total_iterations;
        total = cfg.total_iterations;
        run_training(state, ds.training_view(), cfg, cfg.total_iterations, opts);
      } else {
        tr_cfg.resolve(*tr);
        tr_cfg.fit_to(ds);
        cfg = tr_cfg.train;
        total = cfg.total_iterations;
        state = train(ds.training_view(), tr_cfg.arch, cfg, opts);
      }
      const std::size_t touched = count_consumed(state, ds.evaluation_split());
      std::cout << "iterations\t" << state.iteration << "\n"
                << "eval_samples_consumed\t" << touched << "\n"
                << "checkpoint\t" << (fs::path(tr_ckpt_dir) / "checkpoint.dmcl").string() << "\n";
      return touched == 0 ? 0 : 3;
    }

    if (ev->parsed()) {
      const ZsdaDataset ds = ev_data.load();
      LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
      EvalResult r = evaluate(ck.state.model, ds.evaluation_split());
      r.run_metadata = {ck.config.seed, config_digest(ck.state.model.config(), ck.config),
                        fs::path(ev_ckpt).filename().string() + "@" + std::to_string(ck.state.iteration)};
      print_eval(r, std::cout);
      if (!ev_json.empty()) {
        nlohmann::json j{{"target_toi_accuracy", r.target_toi_accuracy},
                         {"n_samples", r.n_samples},
                         {"n_correct", r.n_correct},
                         {"seed", r.run_metadata.seed},
                         {"config_digest", r.run_metadata.config_digest},
                         {"checkpoint_id", r.run_metadata.checkpoint_id}};
        nlohmann::json per = nlohmann::json::object();
        for (const auto& [cls, acc] : r.per_class_accuracy) per[std::to_string(cls)] = acc;
        j["per_class_accuracy"] = per;
        std::ofstream(ev_json) << j.dump(2) << "\n";
      }
      return 0;
    }

    if (ab->parsed()) {
      const ZsdaDataset ds = ab_data.load();
      ab_cfg.resolve(*ab);
      ab_cfg.fit_to(ds);
      AblationOptions opts;
      opts.output_dir = ab_out;
      if (!ab_variants.empty()) {
        opts.variants.clear();
        for (const auto& v : ab_variants) opts.variants.push_back(parse_variant(v));
      }
      opts.log = [](const std::string& line) { std::cerr << line << "\n"; };
      opts.progress_interval = ab_progress;
      opts.reuse_finished = ab_reuse;
      fs::create_directories(ab_out);
      const auto rows = run_ablation_matrix(ds, ab_cfg.arch, ab_cfg.train, ab_seeds, opts);
      const std::string table = ablation_table(rows), summary = ablation_summary(rows);
      std::ofstream(fs::path(ab_out) / "table.tsv") << table;
      std::ofstream(fs::path(ab_out) / "summary.txt") << summary;
      std::cout << table << "\n" << summary;
      return 0;
    }

    if (ex->parsed()) {
      const ZsdaDataset ds = ex_data.load();
      LoadedCheckpoint ck = load_checkpoint(ex_ckpt);
      const FeatureDump dump =
          export_features(ck.state.model, ds, parse_embedding_source(ex_source), ex_samples, ex_seed);
      write_feature_dump(ex_out, dump);
      std::cout << "rows\t" << dump.rows.size() << "\ndim\t" << dump.dim() << "\n";
      if (ex_score) {
        const DisentanglementScore s = disentanglement_score(dump);
        std::printf("# domain_alignment: mean over tasks of cos(source centroid, target centroid)\n"
                    "# task_separation: (b - a) / max(a, b), b = mean between-task distance, "
                    "a = mean within-task distance\n"
                    "domain_alignment\t%.6f\ntask_separation\t%.6f%s\n",
                    s.domain_alignment, s.task_separation, s.degenerate ? "\tdegenerate" : "");
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
