#include "dmcl/datasets.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dmcl/errors.hpp"

namespace dmcl {

namespace {

constexpr std::array<Split, 4> kAllSplits = {Split::kSourceToi, Split::kSourceIrt,
                                             Split::kTargetIrt, Split::kTargetToiEval};

Task expected_task(Split s) {
  return (s == Split::kSourceToi || s == Split::kTargetToiEval) ? Task::kToi : Task::kIrt;
}

double expected_domain(Split s) {
  return (s == Split::kSourceToi || s == Split::kSourceIrt) ? 0.0 : 1.0;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) fields.push_back(field);
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

std::string_view to_string(Task task) { return task == Task::kToi ? "TOI" : "IRT"; }

Task parse_task(std::string_view name) {
  if (name == "TOI") return Task::kToi;
  if (name == "IRT") return Task::kIrt;
  throw DataError("unknown task tag '" + std::string(name) + "'");
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kSourceToi: return "source_toi";
    case Split::kSourceIrt: return "source_irt";
    case Split::kTargetIrt: return "target_irt";
    case Split::kTargetToiEval: return "target_toi_eval";
  }
  return "?";
}

std::uint64_t sample_id_for(std::string_view path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : path) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

LabeledImage make_labeled(const ColorImage& img, std::size_t class_index, Task task,
                          double domain_label, std::string path) {
  LabeledImage s;
  s.height = img.height;
  s.width = img.width;
  s.pixels.assign(img.pixels.begin(), img.pixels.end());
  s.class_index = class_index;
  s.task = task;
  s.domain_label = domain_label;
  s.sample_id = sample_id_for(path);
  s.path = std::move(path);
  return s;
}

void LabelSpaces::validate() const {
  if (toi_classes.empty() || irt_classes.empty())
    throw DataError("label spaces must both be nonempty");
  std::unordered_set<std::string> toi(toi_classes.begin(), toi_classes.end());
  if (toi.size() != toi_classes.size()) throw DataError("duplicate ToI class name");
  std::unordered_set<std::string> irt;
  for (const auto& c : irt_classes) {
    if (toi.count(c)) throw DataError("class '" + c + "' appears in both ToI and IrT label spaces");
    if (!irt.insert(c).second) throw DataError("duplicate IrT class name '" + c + "'");
  }
}

LabelSpaces partition_label_space(std::span<const std::string> all_classes,
                                  std::size_t toi_count, std::uint64_t seed) {
  if (toi_count < 1 || toi_count >= all_classes.size())
    throw ConfigError("toi_count must lie in [1, " + std::to_string(all_classes.size()) +
                      "), got " + std::to_string(toi_count));
  std::vector<std::size_t> order(all_classes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x1abe1));
  for (std::size_t i = 0; i < toi_count; ++i)
    std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);
  std::vector<bool> is_toi(all_classes.size(), false);
  for (std::size_t i = 0; i < toi_count; ++i) is_toi[order[i]] = true;
  LabelSpaces spaces;
  for (std::size_t i = 0; i < all_classes.size(); ++i)
    (is_toi[i] ? spaces.toi_classes : spaces.irt_classes).push_back(all_classes[i]);
  spaces.validate();
  return spaces;
}

ZsdaDataset::ZsdaDataset(std::vector<LabeledImage> source_toi,
                         std::vector<LabeledImage> source_irt,
                         std::vector<LabeledImage> target_irt,
                         std::vector<LabeledImage> target_toi_eval, LabelSpaces label_spaces)
    : source_toi_(std::move(source_toi)), source_irt_(std::move(source_irt)),
      target_irt_(std::move(target_irt)), target_toi_eval_(std::move(target_toi_eval)),
      label_spaces_(std::move(label_spaces)) {
  validate();
}

const std::vector<LabeledImage>& ZsdaDataset::split(Split s) const {
  switch (s) {
    case Split::kSourceToi: return source_toi_;
    case Split::kSourceIrt: return source_irt_;
    case Split::kTargetIrt: return target_irt_;
    case Split::kTargetToiEval: return target_toi_eval_;
  }
  throw ConfigError("unknown split");
}

std::size_t ZsdaDataset::height() const { return source_toi_.empty() ? 0 : source_toi_[0].height; }
std::size_t ZsdaDataset::width() const { return source_toi_.empty() ? 0 : source_toi_[0].width; }

std::vector<SplitCheck> check_invariants(const ZsdaDataset& ds) {
  std::vector<SplitCheck> checks;
  {
    SplitCheck c{"label spaces disjoint and nonempty"};
    try {
      ds.label_spaces().validate();
    } catch (const Error& e) {
      c.ok = false;
      c.detail = e.what();
    }
    checks.push_back(c);
  }
  const std::size_t h = ds.height(), w = ds.width();
  for (Split s : kAllSplits) {
    const auto& items = ds.split(s);
    const std::string name(to_string(s));
    SplitCheck nonempty{name + " nonempty", !items.empty(), ""};
    checks.push_back(nonempty);
    SplitCheck consistent{name + " task/domain/class/shape consistent"};
    for (std::size_t i = 0; i < items.size() && consistent.ok; ++i) {
      const auto& x = items[i];
      std::string why;
      if (x.task != expected_task(s))
        why = "task " + std::string(to_string(x.task));
      else if (x.domain_label != expected_domain(s))
        why = "domain label " + std::to_string(x.domain_label);
      else if (x.class_index >= ds.label_spaces().size(x.task))
        why = "class index " + std::to_string(x.class_index) + " outside label space";
      else if (x.height != h || x.width != w || x.pixels.size() != 3 * h * w)
        why = "image shape differs from the dataset shape";
      if (!why.empty()) {
        consistent.ok = false;
        consistent.detail = "sample " + std::to_string(i) + " (" + x.path + "): " + why;
      }
    }
    checks.push_back(consistent);
  }
  SplitCheck isolation{"evaluation split disjoint from training splits"};
  std::unordered_set<std::uint64_t> train_ids;
  for (Split s : {Split::kSourceToi, Split::kSourceIrt, Split::kTargetIrt})
    for (const auto& x : ds.split(s)) train_ids.insert(x.sample_id);
  for (const auto& x : ds.evaluation_split())
    if (train_ids.count(x.sample_id)) {
      isolation.ok = false;
      isolation.detail = "sample " + x.path + " is also used for training";
      break;
    }
  checks.push_back(isolation);
  return checks;
}

void ZsdaDataset::validate() const {
  for (const auto& c : check_invariants(*this))
    if (!c.ok) throw DataError("dataset invariant violated: " + c.name + (c.detail.empty() ? "" : ": " + c.detail));
}

void TripletBatch::validate() const {
  if (xs_r.size() < 2) throw DataError("triplet batch needs K >= 2");
  if (xs_ir.size() != xs_r.size() || xt_ir.size() != xs_r.size())
    throw DataError("triplet batch splits have different lengths");
}

namespace {

SampleRefs draw_distinct(const std::vector<LabeledImage>& items, std::size_t k, Rng& rng,
                         std::string_view name) {
  if (items.size() < k)
    throw DataError("split " + std::string(name) + " has " + std::to_string(items.size()) +
                    " samples, fewer than the batch size " + std::to_string(k));
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  SampleRefs out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    out.emplace_back(items[idx[i]]);
  }
  return out;
}

}  // namespace

TripletBatch sample_triplet_batch(const TrainingView& view, std::size_t k, Rng& rng) {
  if (k < 1) throw ConfigError("batch size must be positive");
  TripletBatch tb;
  tb.xs_r = draw_distinct(view.source_toi(), k, rng, "source_toi");
  tb.xs_ir = draw_distinct(view.source_irt(), k, rng, "source_irt");
  tb.xt_ir = draw_distinct(view.target_irt(), k, rng, "target_irt");
  return tb;
}

ZsdaDataset load_manifest(const std::filesystem::path& root) {
  const auto classes_file = root / "classes.tsv";
  std::ifstream cin(classes_file);
  if (!cin) throw DataError("missing label-space file " + classes_file.string());
  LabelSpaces spaces;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(cin, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 2)
      throw DataError(classes_file.string() + ":" + std::to_string(lineno) + ": expected 2 fields");
    (parse_task(f[0]) == Task::kToi ? spaces.toi_classes : spaces.irt_classes).push_back(f[1]);
  }
  spaces.validate();

  std::array<std::vector<LabeledImage>, 4> splits;
  for (std::size_t si = 0; si < kAllSplits.size(); ++si) {
    const Split s = kAllSplits[si];
    const auto file = root / (std::string(to_string(s)) + ".tsv");
    std::ifstream in(file);
    if (!in) throw DataError("missing split manifest " + file.string());
    lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      const std::string where = file.string() + ":" + std::to_string(lineno) + ": ";
      const auto f = split_tabs(line);
      if (f.size() != 4) throw DataError(where + "expected 4 tab-separated fields");
      std::size_t cls = 0;
      try {
        std::size_t pos = 0;
        cls = std::stoul(f[1], &pos);
        if (pos != f[1].size()) throw std::invalid_argument(f[1]);
      } catch (const std::exception&) {
        throw DataError(where + "bad class index '" + f[1] + "'");
      }
      const Task task = parse_task(f[2]);
      if (task != expected_task(s))
        throw DataError(where + "task " + f[2] + " does not belong in split " +
                        std::string(to_string(s)));
      if (f[3] != "0" && f[3] != "1") throw DataError(where + "domain must be 0 or 1");
      const double domain = f[3] == "1" ? 1.0 : 0.0;
      if (domain != expected_domain(s))
        throw DataError(where + "domain " + f[3] + " does not belong in split " +
                        std::string(to_string(s)));
      if (cls >= spaces.size(task))
        throw DataError(where + "class index " + f[1] + " is outside the " + f[2] +
                        " label space of size " + std::to_string(spaces.size(task)));
      ColorImage img = read_pnm_color(root / f[0]);
      splits[si].push_back(make_labeled(img, cls, task, domain, f[0]));
    }
    if (splits[si].empty())
      throw DataError("split " + std::string(to_string(s)) + " (" + file.string() + ") is empty");
  }
  return ZsdaDataset(std::move(splits[0]), std::move(splits[1]), std::move(splits[2]),
                     std::move(splits[3]), std::move(spaces));
}

void save_dataset(const std::filesystem::path& root, const ZsdaDataset& ds) {
  std::filesystem::create_directories(root);
  {
    std::ofstream out(root / "classes.tsv");
    for (const auto& c : ds.label_spaces().toi_classes) out << "TOI\t" << c << '\n';
    for (const auto& c : ds.label_spaces().irt_classes) out << "IRT\t" << c << '\n';
  }
  for (Split s : kAllSplits) {
    const std::string name(to_string(s));
    std::filesystem::create_directories(root / name);
    std::ofstream out(root / (name + ".tsv"));
    if (!out) throw DataError("cannot write manifest for " + name);
    const auto& items = ds.split(s);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& x = items[i];
      std::string rel = x.path;
      if (rel.empty() || rel.find('/') == std::string::npos) {
        std::ostringstream os;
        os << name << "/" << i << ".ppm";
        rel = os.str();
      }
      std::filesystem::create_directories((root / rel).parent_path());
      ColorImage img(x.height, x.width);
      img.pixels.assign(x.pixels.begin(), x.pixels.end());
      write_ppm(root / rel, img);
      out << rel << '\t' << x.class_index << '\t' << to_string(x.task) << '\t'
          << (x.domain_label > 0.5 ? 1 : 0) << '\n';
    }
  }
}

}  // namespace dmcl
