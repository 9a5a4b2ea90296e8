// Python bindings for the core operations. Configurations cross the boundary
// as JSON text; the dmcl package converts them from and to dicts.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dmcl/domain_synth.hpp"
#include "dmcl/errors.hpp"
#include "dmcl/eval.hpp"
#include "dmcl/losses.hpp"
#include "dmcl/mixup.hpp"
#include "dmcl/presets.hpp"
#include "dmcl/trainer.hpp"
#include "dmcl/xnist.hpp"

namespace py = pybind11;
using namespace dmcl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

RawImage raw_from(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected an H x W array");
  RawImage img(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Array array_from(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Tensor<double> tensor_from(const Array& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array array_from(const Tensor<double>& t) {
  return array_from(t.storage(), std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
}

std::vector<double> vec_from(const Array& a) { return {a.data(), a.data() + a.size()}; }

struct Config {
  ArchitectureConfig arch;
  TrainConfig train;
};

Config config_from(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Config c;
  if (j.contains("architecture")) c.arch = j.at("architecture").get<ArchitectureConfig>();
  if (j.contains("train_config")) c.train = j.at("train_config").get<TrainConfig>();
  return c;
}

std::string config_text(const ArchitectureConfig& a, const TrainConfig& t) {
  return nlohmann::json{{"architecture", a}, {"train_config", t}}.dump();
}

void fit(ArchitectureConfig& arch, const ZsdaDataset& ds) {
  arch.input_shape[0] = ds.height();
  arch.input_shape[1] = ds.width();
  arch.head_class_counts = {ds.label_spaces().toi_classes.size(),
                            ds.label_spaces().irt_classes.size()};
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["target_toi_accuracy"] = r.target_toi_accuracy;
  d["n_samples"] = r.n_samples;
  d["n_correct"] = r.n_correct;
  d["per_class_accuracy"] = r.per_class_accuracy;
  return d;
}

py::dict report_dict(std::size_t iteration, const LossReport& r) {
  py::dict d;
  d["iteration"] = iteration;
  d["l_d"] = r.l_d;
  d["l_md"] = r.l_md;
  d["l_f"] = r.l_f;
  d["l_mf"] = r.l_mf;
  d["l_con_d"] = r.l_con_d;
  d["l_con_f"] = r.l_con_f;
  return d;
}

// A trained (or loaded) model together with its training state.
struct Run {
  TrainState state;
  TrainConfig config;
};

py::tuple dump_tuple(const FeatureDump& dump) {
  const std::size_t n = dump.rows.size(), m = dump.dim();
  Array emb({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(m)});
  py::list tasks, domains, classes, splits;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(dump.rows[i].embedding.begin(), dump.rows[i].embedding.end(), emb.mutable_data() + i * m);
    tasks.append(std::string(to_string(dump.rows[i].task)));
    domains.append(dump.rows[i].domain);
    classes.append(dump.rows[i].class_index);
    splits.append(dump.rows[i].split);
  }
  return py::make_tuple(emb, tasks, domains, classes, splits);
}

}  // namespace

PYBIND11_MODULE(_dmcl, m) {
  m.doc() = "DMCL zero-shot domain adaptation core";

  // Translators are tried newest first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // ---- domain synthesis ----
  m.def("to_negative", [](const Array& img) {
    const RawImage r = to_negative(raw_from(img));
    return array_from(r.pixels, {static_cast<py::ssize_t>(r.height), static_cast<py::ssize_t>(r.width)});
  });
  m.def(
      "to_edge",
      [](const Array& img, double low, double high, double sigma) {
        const RawImage r = to_edge(raw_from(img), CannyOptions{low, high, sigma});
        return array_from(r.pixels, {static_cast<py::ssize_t>(r.height), static_cast<py::ssize_t>(r.width)});
      },
      py::arg("image"), py::arg("low") = 0.1, py::arg("high") = 0.3, py::arg("sigma") = 1.0);
  m.def(
      "synthesize",
      [](const Array& images, const std::string& domain, std::uint64_t seed) {
        if (images.ndim() != 3) throw ShapeError("expected an N x H x W array");
        const std::size_t n = images.shape(0), h = images.shape(1), w = images.shape(2);
        std::vector<RawImage> corpus;
        for (std::size_t i = 0; i < n; ++i) {
          RawImage img(h, w);
          std::copy(images.data() + i * h * w, images.data() + (i + 1) * h * w, img.pixels.begin());
          corpus.push_back(std::move(img));
        }
        const auto out = synthesize_domain(corpus, parse_domain_tag(domain), seed);
        Array arr({static_cast<py::ssize_t>(n), py::ssize_t{3}, static_cast<py::ssize_t>(h),
                   static_cast<py::ssize_t>(w)});
        for (std::size_t i = 0; i < n; ++i)
          std::copy(out[i].image.pixels.begin(), out[i].image.pixels.end(), arr.mutable_data() + i * 3 * h * w);
        return arr;
      },
      py::arg("images"), py::arg("domain"), py::arg("seed") = 0);

  // ---- mixup ----
  m.def(
      "sample_lambda",
      [](double alpha, std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        std::vector<double> v(n);
        for (auto& x : v) x = sample_lambda(alpha, rng);
        return array_from(v, {static_cast<py::ssize_t>(n)});
      },
      py::arg("alpha"), py::arg("n"), py::arg("seed") = 0);
  m.def("mix", [](const Array& a, const Array& b, double lam) {
    if (a.size() != b.size()) throw ShapeError("mix operands differ in size");
    if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("lam must lie in [0, 1]");
    Array out(std::vector<py::ssize_t>(a.shape(), a.shape() + a.ndim()));
    for (py::ssize_t i = 0; i < a.size(); ++i) out.mutable_data()[i] = lam * a.data()[i] + (1 - lam) * b.data()[i];
    return out;
  });

  // ---- losses ----
  m.def("domain_loss", [](const Array& ps, const Array& pt) { return domain_loss(vec_from(ps), vec_from(pt)); });
  m.def("mixed_domain_loss", [](const Array& p, const Array& lam) {
    if (p.size() != lam.size()) throw ShapeError("probabilities and lambdas differ in length");
    std::vector<MixedProbability> mp;
    for (py::ssize_t i = 0; i < p.size(); ++i) mp.push_back({p.data()[i], lam.data()[i]});
    return mixed_domain_loss(mp);
  });
  m.def("cross_entropy", [](const Array& logits, const std::vector<std::size_t>& targets) {
    return cross_entropy(tensor_from(logits), targets).value;
  });
  m.def(
      "nt_xent",
      [](const Array& anchors, const Array& positives, double temperature, bool include_positive) {
        const Tensor<double> a = tensor_from(anchors), p = tensor_from(positives);
        const auto t = nt_xent(a, p, ContrastiveConfig{temperature, a.dim(0), include_positive});
        return py::make_tuple(t.value, array_from(t.grad_anchors), array_from(t.grad_positives));
      },
      py::arg("anchors"), py::arg("positives"), py::arg("temperature") = 0.5,
      py::arg("include_positive") = false);

  // ---- data ----
  py::class_<ZsdaDataset>(m, "Dataset")
      .def_static("from_manifest", &load_manifest)
      .def_static(
          "xnist",
          [](const std::filesystem::path& dir, std::size_t per_split, std::size_t eval_size,
             const std::string& source, const std::string& target, std::uint64_t seed) {
            XnistOptions o;
            o.per_split = per_split;
            o.eval_size = eval_size;
            o.source = parse_domain_tag(source);
            o.target = parse_domain_tag(target);
            o.seed = seed;
            return load_xnist(dir, o);
          },
          py::arg("directory"), py::arg("per_split") = 2000, py::arg("eval_size") = 2000,
          py::arg("source") = "G", py::arg("target") = "N", py::arg("seed") = 0)
      .def("save", [](const ZsdaDataset& ds, const std::filesystem::path& root) { save_dataset(root, ds); })
      .def("split_sizes",
           [](const ZsdaDataset& ds) {
             py::dict d;
             for (Split s : {Split::kSourceToi, Split::kSourceIrt, Split::kTargetIrt, Split::kTargetToiEval})
               d[py::str(std::string(to_string(s)))] = ds.split(s).size();
             return d;
           })
      .def_property_readonly("toi_classes", [](const ZsdaDataset& ds) { return ds.label_spaces().toi_classes; })
      .def_property_readonly("irt_classes", [](const ZsdaDataset& ds) { return ds.label_spaces().irt_classes; })
      .def_property_readonly("image_shape", [](const ZsdaDataset& ds) { return py::make_tuple(ds.height(), ds.width()); })
      .def("check", [](const ZsdaDataset& ds) {
        py::list out;
        for (const auto& c : check_invariants(ds)) out.append(py::make_tuple(c.name, c.ok, c.detail));
        return out;
      });

  m.def("preset_names", &preset_names);
  m.def("preset_json", [](const std::string& name) {
    const Preset& p = preset(name);
    return config_text(p.arch, p.train);
  });

  // ---- training and evaluation ----
  py::class_<Run>(m, "Run")
      .def_property_readonly("iteration", [](const Run& r) { return r.state.iteration; })
      .def_property_readonly("config_json", [](Run& r) { return config_text(r.state.model.config(), r.config); })
      .def("metrics",
           [](const Run& r) {
             py::list out;
             for (const auto& m : r.state.metrics_log) out.append(report_dict(m.iteration, m.report));
             return out;
           })
      .def("save", [](const Run& r, const std::filesystem::path& p) { save_checkpoint(p, r.state, r.config); })
      .def("evaluate", [](Run& r, const ZsdaDataset& ds) { return eval_dict(evaluate(r.state.model, ds.evaluation_split())); })
      .def("eval_samples_consumed",
           [](const Run& r, const ZsdaDataset& ds) { return count_consumed(r.state, ds.evaluation_split()); })
      .def(
          "export_features",
          [](Run& r, const ZsdaDataset& ds, const std::string& source, std::size_t n, std::uint64_t seed) {
            return dump_tuple(export_features(r.state.model, ds, parse_embedding_source(source), n, seed));
          },
          py::arg("dataset"), py::arg("source") = "G_F", py::arg("samples_per_split") = 200,
          py::arg("seed") = 0);

  m.def(
      "train",
      [](const ZsdaDataset& ds, const std::string& config, const std::string& checkpoint_dir,
         const std::function<void(py::dict)>& progress) {
        Config c = config_from(config);
        fit(c.arch, ds);
        TrainOptions opts;
        opts.checkpoint_dir = checkpoint_dir;
        if (!checkpoint_dir.empty()) opts.metrics_path = opts.checkpoint_dir / "metrics.tsv";
        if (progress)
          opts.on_iteration = [&](const TrainState& s) {
            py::gil_scoped_acquire gil;
            progress(report_dict(s.metrics_log.back().iteration, s.metrics_log.back().report));
          };
        Run run;
        run.config = c.train;
        {
          py::gil_scoped_release release;
          run.state = train(ds.training_view(), c.arch, c.train, opts);
        }
        return run;
      },
      py::arg("dataset"), py::arg("config"), py::arg("checkpoint_dir") = "", py::arg("progress") = nullptr);
  m.def("load_checkpoint", [](const std::filesystem::path& p) {
    LoadedCheckpoint ck = load_checkpoint(p);
    return Run{std::move(ck.state), ck.config};
  });

  m.def(
      "run_ablation",
      [](const ZsdaDataset& ds, const std::string& config, std::size_t n_seeds,
         const std::vector<std::string>& variants, const std::string& output_dir) {
        Config c = config_from(config);
        fit(c.arch, ds);
        AblationOptions opts;
        opts.output_dir = output_dir;
        if (!variants.empty()) {
          opts.variants.clear();
          for (const auto& v : variants) opts.variants.push_back(parse_variant(v));
        }
        std::vector<AblationRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_ablation_matrix(ds, c.arch, c.train, n_seeds, opts);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d = eval_dict(r.result);
          d["variant"] = std::string(to_string(r.variant));
          d["seed"] = r.seed;
          d["eval_samples_consumed"] = r.eval_samples_consumed;
          out.append(d);
        }
        return out;
      },
      py::arg("dataset"), py::arg("config"), py::arg("n_seeds") = 3,
      py::arg("variants") = std::vector<std::string>{}, py::arg("output_dir") = "");

  m.def("disentanglement_score", [](const Array& emb, const std::vector<std::string>& tasks,
                                    const std::vector<double>& domains) {
    if (emb.ndim() != 2 || std::size_t(emb.shape(0)) != tasks.size() || tasks.size() != domains.size())
      throw ShapeError("embeddings, tasks and domains must have matching lengths");
    FeatureDump d;
    const std::size_t m = emb.shape(1);
    for (std::size_t i = 0; i < tasks.size(); ++i)
      d.rows.push_back({std::vector<double>(emb.data() + i * m, emb.data() + (i + 1) * m),
                        parse_task(tasks[i]), domains[i], 0, ""});
    const DisentanglementScore s = disentanglement_score(d);
    py::dict out;
    out["domain_alignment"] = s.domain_alignment;
    out["task_separation"] = s.task_separation;
    out["degenerate"] = s.degenerate;
    return out;
  });
}
