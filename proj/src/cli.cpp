#include "adod/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "adod/datasets.hpp"
#include "adod/error.hpp"
#include "adod/evaluation.hpp"
#include "adod/network.hpp"
#include "adod/postprocess.hpp"
#include "adod/training.hpp"
#include "adod/verify.hpp"

namespace fs = std::filesystem;

namespace adod {

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {"baseline", false, false, false},
      {"residual", true, false, false},
      {"attention", false, true, false},
      {"residual_attention", true, true, false},
      {"domain", false, false, true},
      {"domain_residual", true, false, true},
      {"domain_attention", false, true, true},
      {"domain_residual_attention", true, true, true},
  };
  return rows;
}

namespace {

constexpr const char* kResolvedConfig = "resolved-config";
constexpr const char* kRunMetadata = "run-metadata";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Config precedence: file, then --set, then dedicated flags.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
};

void add_config_options(CLI::App* sub, ConfigArgs& c) {
  sub->add_option("--config", c.config_path, "key = value configuration file");
  sub->add_option("--set", c.sets, "override one configuration key (key=value), repeatable")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
}

// Dedicated flag feeding configuration key `key`.
void add_keyed(CLI::App* sub, ConfigArgs& c, const std::string& flag, const std::string& key,
               const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&c, key](const std::string& v) { c.flags[key] = v; }, help);
}

KeyValues resolve_config(const ConfigArgs& c, const std::set<std::string>& allowed,
                         bool seeded) {
  KeyValues kv;
  if (!c.config_path.empty()) kv = KeyValues::load(c.config_path);
  for (const auto& s : c.sets) kv.set_assignment(s);
  for (const auto& [k, v] : c.flags) kv.set(k, v);
  for (const auto& [k, v] : kv.entries())
    if (!allowed.count(k)) throw ValidationError("unknown configuration key `" + k + "`");
  if (seeded && !kv.has("seed")) {
    const char* env = std::getenv("ADOD_SEED");
    kv.set("seed", env && *env ? env : "0");
  }
  return kv;
}

std::set<std::string> training_keys() {
  std::set<std::string> keys(NetworkSpec::keys().begin(), NetworkSpec::keys().end());
  keys.insert(TrainConfig::keys().begin(), TrainConfig::keys().end());
  keys.insert("kmeans_anchors");
  return keys;
}

// ---------------------------------------------------------------- gen-data

const std::vector<std::string>& gen_keys() {
  static const std::vector<std::string> k{"seed",        "n",          "classes",
                                          "domains",     "size",       "max_objects",
                                          "min_object",  "max_object", "preset"};
  return k;
}

SyntheticConfig synthetic_config(const KeyValues& kv) {
  auto count = [&](const std::string& key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ValidationError(key + " must be nonnegative");
    return static_cast<std::size_t>(v);
  };
  SyntheticConfig c;
  c.seed = kv.get_u64("seed", c.seed);
  c.num_images = count("n", c.num_images);
  c.num_classes = count("classes", c.num_classes);
  c.num_domains = count("domains", c.num_domains);
  c.image_size = count("size", c.image_size);
  c.max_objects = count("max_objects", c.max_objects);
  c.min_object = kv.get_double("min_object", c.min_object);
  c.max_object = kv.get_double("max_object", c.max_object);
  const std::string preset = kv.get_string("preset", "");
  if (!preset.empty()) c.force_cast = WaterCastParams::parse_preset(preset);
  c.validate();
  return c;
}

KeyValues synthetic_key_values(const SyntheticConfig& c) {
  KeyValues kv;
  kv.set("seed", std::to_string(c.seed));
  kv.set("n", std::to_string(c.num_images));
  kv.set("classes", std::to_string(c.num_classes));
  kv.set("domains", std::to_string(c.num_domains));
  kv.set("size", std::to_string(c.image_size));
  kv.set("max_objects", std::to_string(c.max_objects));
  kv.set("min_object", format_double(c.min_object));
  kv.set("max_object", format_double(c.max_object));
  kv.set("preset", c.force_cast ? c.force_cast->preset_name() : "");
  return kv;
}

int cmd_gen_data(const ConfigArgs& args, const std::string& out_dir, std::ostream& out) {
  const KeyValues kv = resolve_config(args, {gen_keys().begin(), gen_keys().end()}, true);
  const SyntheticConfig cfg = synthetic_config(kv);
  make_dir(out_dir);
  const DatasetManifest m = generate_synthetic_dataset(cfg, out_dir);
  write_text(fs::path(out_dir) / kResolvedConfig, synthetic_key_values(cfg).serialize());
  out << "wrote " << m.samples.size() << " images to " << out_dir << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainedModel {
  Network net;
  KeyValues resolved;
  TrainResult result;
};

TrainedModel train_pipeline(KeyValues kv, const std::string& manifest_path,
                            const std::string& out_dir, std::ostream& out) {
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  if (manifest.samples.empty()) throw ValidationError("manifest " + manifest_path + " is empty");
  if (kv.get_bool("use_domain", false) && !kv.has("num_domains"))
    kv.set("num_domains", std::to_string(std::max<std::size_t>(2, manifest.num_domains())));
  NetworkSpec spec = NetworkSpec::from_key_values(kv);
  const TrainConfig cfg = TrainConfig::from_key_values(kv);
  spec.validate();
  const std::vector<LoadedSample> data = load_samples(manifest, spec.input_width);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (const auto& b : data[i].boxes)
      if (b.class_id >= spec.num_classes)
        throw ValidationError("sample " + std::to_string(i) + " has class " +
                              std::to_string(b.class_id) + " but num_classes is " +
                              std::to_string(spec.num_classes));
    if (spec.use_domain && data[i].domain_id >= spec.num_domains)
      throw ValidationError("sample " + std::to_string(i) + " has domain " +
                            std::to_string(data[i].domain_id) + " but num_domains is " +
                            std::to_string(spec.num_domains));
  }
  const bool kmeans = kv.get_bool("kmeans_anchors", false);
  if (kmeans) {
    std::vector<Anchor> boxes;
    const double W = static_cast<double>(spec.input_width);
    for (const auto& s : data)
      for (const auto& b : s.boxes) boxes.push_back({b.w * W, b.h * W});
    spec.anchors = kmeans_anchors(boxes, kNumScales * kAnchorsPerScale, cfg.seed);
    spec.validate();
  }

  KeyValues resolved = spec.to_key_values();
  resolved.merge(cfg.to_key_values());
  resolved.set("kmeans_anchors", kmeans ? "true" : "false");
  make_dir(out_dir);
  write_text(fs::path(out_dir) / kResolvedConfig, resolved.serialize());

  Network net(spec, cfg.seed);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.on_epoch = [&](const EpochMetrics& m) {
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %zu/%zu total %.6f\n", m.epoch, cfg.epochs,
                  m.loss.total);
    out << line;
  };
  const auto t0 = std::chrono::system_clock::now();
  TrainResult result = train(net, data, cfg, opts);
  const double secs =
      std::chrono::duration<double>(std::chrono::system_clock::now() - t0).count();
  std::ostringstream meta;
  meta << "started_unix = "
       << std::chrono::duration_cast<std::chrono::seconds>(t0.time_since_epoch()).count()
       << "\nelapsed_seconds = " << secs << "\n";
  write_text(fs::path(out_dir) / kRunMetadata, meta.str());
  return {std::move(net), std::move(resolved), std::move(result)};
}

int cmd_train(const ConfigArgs& args, const std::string& data, const std::string& out_dir,
              std::ostream& out) {
  const KeyValues kv = resolve_config(args, training_keys(), true);
  TrainedModel m = train_pipeline(kv, data, out_dir, out);
  if (!m.result.history.empty()) {
    char line[160];
    std::snprintf(line, sizeof(line), "initial total %.6f final total %.6f\n",
                  m.result.history.front().loss.total, m.result.history.back().loss.total);
    out << line;
  }
  return kExitOk;
}

// ------------------------------------------------------------------ detect

void draw_box(Tensor& image, const BBox& b, const std::array<double, 3>& color) {
  const std::size_t H = image.dim(1), W = image.dim(2);
  auto px = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v * static_cast<double>(n), 0.0,
                                               static_cast<double>(n - 1)));
  };
  const std::size_t x0 = px(b.x_min, W), x1 = px(b.x_max, W);
  const std::size_t y0 = px(b.y_min, H), y1 = px(b.y_max, H);
  for (std::size_t c = 0; c < 3; ++c) {
    double* p = image.ptr() + c * H * W;
    for (std::size_t x = x0; x <= x1; ++x) p[y0 * W + x] = p[y1 * W + x] = color[c];
    for (std::size_t y = y0; y <= y1; ++y) p[y * W + x0] = p[y * W + x1] = color[c];
  }
}

void check_unit_interval(double v, const std::string& name) {
  if (!(v >= 0.0 && v <= 1.0))
    throw ValidationError(name + " must lie in [0,1], got " + format_double(v));
}

std::vector<DumpRecord> detect_pipeline(const Network& net, const std::string& manifest_path,
                                        double conf, double nms_iou,
                                        const std::string& overlay_dir,
                                        std::size_t batch_size = 8) {
  check_unit_interval(conf, "conf");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0))
    throw ValidationError("nms must lie in (0,1], got " + format_double(nms_iou));
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  const std::vector<LoadedSample> data = load_samples(manifest, net.spec().input_width);
  if (!overlay_dir.empty()) make_dir(overlay_dir);
  std::vector<DumpRecord> records;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const Tensor*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&data[i].image);
    const auto dets = detect(net, stack_images(imgs), conf, nms_iou);
    for (std::size_t i = start; i < end; ++i) {
      std::vector<Detection> mapped;
      for (Detection d : dets[i - start]) {
        d.bbox = data[i].transform.inverse(d.bbox).clamped();
        mapped.push_back(d);
        records.push_back({i, d});
      }
      if (!overlay_dir.empty()) {
        Tensor img = load_image(manifest.resolve(manifest.samples[i].image_path));
        for (const auto& d : mapped)
          draw_box(img, d.bbox, class_color(d.class_id, net.spec().num_classes));
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.ppm", i);
        save_ppm((fs::path(overlay_dir) / name).string(), img);
      }
    }
  }
  return records;
}

void save_dump(const fs::path& path, const std::vector<DumpRecord>& records) {
  std::ostringstream os;
  write_detection_dump(os, records);
  write_text(path, os.str());
}

Network load_model(const std::string& checkpoint, std::string config_path) {
  if (checkpoint.empty() || !fs::exists(checkpoint))
    throw ValidationError("checkpoint not found: " + checkpoint);
  if (config_path.empty()) config_path = (fs::path(checkpoint).parent_path() / kResolvedConfig).string();
  if (!fs::exists(config_path))
    throw ValidationError("network config not found: " + config_path);
  const KeyValues kv = KeyValues::load(config_path);
  const auto allowed = training_keys();
  for (const auto& [k, v] : kv.entries())
    if (!allowed.count(k)) throw ValidationError("unknown configuration key `" + k + "`");
  return load_checkpoint(checkpoint, NetworkSpec::from_key_values(kv));
}

struct DetectArgs {
  std::string checkpoint, config, data, out;
  double conf = 0.25, nms = 0.45;
  bool overlays = false;
  std::size_t batch = 8;
};

int cmd_detect(const DetectArgs& a, std::ostream& out) {
  check_unit_interval(a.conf, "conf");
  if (a.batch < 1) throw ValidationError("batch-size must be >= 1");
  const Network net = load_model(a.checkpoint, a.config);
  make_dir(a.out);
  const auto records = detect_pipeline(net, a.data, a.conf, a.nms,
                                       a.overlays ? (fs::path(a.out) / "overlays").string() : "",
                                       a.batch);
  save_dump(fs::path(a.out) / "detections.txt", records);
  KeyValues resolved;
  resolved.set("checkpoint", a.checkpoint);
  resolved.set("data", a.data);
  resolved.set("conf", format_double(a.conf));
  resolved.set("nms", format_double(a.nms));
  resolved.set("overlays", a.overlays ? "true" : "false");
  write_text(fs::path(a.out) / kResolvedConfig, resolved.serialize());
  out << "wrote " << records.size() << " detections to " << (fs::path(a.out) / "detections.txt").string()
      << "\n";
  return kExitOk;
}

// -------------------------------------------------------------------- eval

std::vector<std::vector<GtBox>> manifest_ground_truth(const DatasetManifest& m) {
  std::vector<std::vector<GtBox>> gts;
  for (const auto& s : m.samples) {
    std::vector<GtBox> g;
    for (const auto& b : parse_label_file(m.resolve(s.label_path)))
      g.push_back({b.class_id, b.to_bbox()});
    gts.push_back(std::move(g));
  }
  return gts;
}

std::vector<std::string> class_names_for(const DatasetManifest& m, const std::string& path) {
  if (!path.empty()) return load_class_names(path);
  const fs::path beside = fs::path(m.base_dir) / "classes.txt";
  if (fs::exists(beside)) return load_class_names(beside.string());
  return default_class_names();
}

EvalReport eval_pipeline(const std::vector<DumpRecord>& records, const DatasetManifest& m,
                         const std::vector<std::string>& names, const EvalConfig& cfg) {
  for (const auto& r : records) {
    if (r.det.class_id >= names.size())
      throw ValidationError("detection class " + std::to_string(r.det.class_id) +
                            " exceeds the " + std::to_string(names.size()) + " class names");
    if (r.image_id >= m.samples.size())
      throw ValidationError("detection image id " + std::to_string(r.image_id) +
                            " exceeds the manifest's " + std::to_string(m.samples.size()) +
                            " samples");
  }
  return evaluate(records, manifest_ground_truth(m), names, cfg);
}

std::vector<DumpRecord> load_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections " + path);
  return read_detection_dump(in);
}

struct EvalArgs {
  std::string detections, data, classes, out;
  std::vector<std::string> formats{"text", "csv", "json"};
  double iou = 0.5;
  std::string interpolation = "all-point";
};

Interpolation parse_interpolation(const std::string& s) {
  if (s == "all-point") return Interpolation::kAllPoint;
  if (s == "11-point") return Interpolation::kElevenPoint;
  throw ValidationError("interpolation must be all-point or 11-point, got " + s);
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  EvalConfig cfg;
  cfg.iou_match_threshold = a.iou;
  cfg.interpolation = parse_interpolation(a.interpolation);
  cfg.validate();
  std::vector<std::pair<ReportFormat, std::string>> formats;
  for (const auto& f : a.formats) {
    if (f == "text") formats.push_back({ReportFormat::kText, "report.txt"});
    else if (f == "csv") formats.push_back({ReportFormat::kCsv, "report.csv"});
    else if (f == "json") formats.push_back({ReportFormat::kJson, "report.json"});
    else throw ValidationError("format must be text, csv or json, got " + f);
  }
  const DatasetManifest m = DatasetManifest::load(a.data);
  const auto names = class_names_for(m, a.classes);
  const EvalReport rep = eval_pipeline(load_dump(a.detections), m, names, cfg);
  make_dir(a.out);
  for (const auto& [f, name] : formats) emit_report(rep, f, (fs::path(a.out) / name).string());
  KeyValues resolved;
  resolved.set("detections", a.detections);
  resolved.set("data", a.data);
  resolved.set("iou", format_double(a.iou));
  resolved.set("interpolation", a.interpolation);
  std::string fl;
  for (const auto& f : a.formats) fl += (fl.empty() ? "" : ",") + f;
  resolved.set("formats", fl);
  write_text(fs::path(a.out) / kResolvedConfig, resolved.serialize());
  out << render_report(rep, ReportFormat::kText);
  return kExitOk;
}

// --------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string seed;
  double tolerance = 1e-4, chain_tolerance = 1e-3, sample = 0.1, epsilon = 1e-5;
  bool no_chain = false;
  std::string inject_fault;
  std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  ConfigArgs c;
  if (!a.seed.empty()) c.flags["seed"] = a.seed;
  const KeyValues kv = resolve_config(c, {"seed"}, true);
  GradCheckSuiteOptions o;
  o.seed = kv.get_u64("seed", 0);
  o.block_tolerance = a.tolerance;
  o.chain_tolerance = a.chain_tolerance;
  o.chain_sample_fraction = a.sample;
  o.epsilon = a.epsilon;
  o.include_chain = !a.no_chain;
  if (!a.inject_fault.empty()) o.inject_fault = a.inject_fault;
  const auto cases = run_gradcheck_suite(o);
  std::ostringstream report;
  bool ok = true;
  for (const auto& c : cases) {
    std::size_t checked = 0;
    for (const auto& e : c.report.entries) checked += e.checked;
    const bool pass = c.report.passed();
    ok = ok && pass;
    char line[256];
    std::snprintf(line, sizeof(line), "%s %-18s op=%s max_rel_error=%.3e tolerance=%.0e checked=%zu skipped=%zu\n",
                  pass ? "PASS" : "FAIL", c.category.c_str(), c.op.c_str(),
                  c.report.max_rel_error(), c.report.tolerance, checked, c.report.skipped());
    report << line;
    if (!pass)
      for (const auto& e : c.report.entries)
        if (e.failed)
          report << "  failed " << e.failed << " element(s) of " << e.name << " in " << c.op
                 << "\n";
  }
  out << report.str();
  if (!a.out.empty()) {
    make_dir(a.out);
    write_text(fs::path(a.out) / "gradcheck.txt", report.str());
    KeyValues resolved;
    resolved.set("seed", std::to_string(o.seed));
    resolved.set("tolerance", format_double(o.block_tolerance));
    resolved.set("chain_tolerance", format_double(o.chain_tolerance));
    resolved.set("sample", format_double(o.chain_sample_fraction));
    resolved.set("epsilon", format_double(o.epsilon));
    resolved.set("chain", o.include_chain ? "true" : "false");
    resolved.set("inject_fault", a.inject_fault);
    write_text(fs::path(a.out) / kResolvedConfig, resolved.serialize());
  }
  return ok ? kExitOk : kExitNumeric;
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
  std::string train, val_original, val_augmented, out, classes;
  std::string rows;
  double conf = 0.005, nms = 0.45;
};

struct RowOutcome {
  std::string name;
  std::optional<EvalReport> original, augmented;
  std::string status = "ok";
  int code = kExitOk;
};

std::string ablation_csv(const std::vector<RowOutcome>& rows,
                         const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "config";
  for (const char* group : {"original", "augmented"}) {
    for (const auto& n : names) os << ',' << group << '_' << n;
    os << ',' << group << "_mAP";
  }
  os << ",status\n";
  char buf[32];
  for (const auto& r : rows) {
    os << r.name;
    for (const auto* rep : {&r.original, &r.augmented}) {
      for (std::size_t k = 0; k <= names.size(); ++k) {
        if (*rep) {
          std::snprintf(buf, sizeof(buf), "%.2f",
                        k < names.size() ? (*rep)->ap_percent[k] : (*rep)->map_percent);
          os << ',' << buf;
        } else {
          os << ",nan";
        }
      }
    }
    os << ',' << r.status << '\n';
  }
  return os.str();
}

std::string ablation_text(const std::vector<RowOutcome>& rows,
                          const std::vector<std::string>& names) {
  std::size_t label = 6;
  for (const auto& r : rows) label = std::max(label, r.name.size());
  std::vector<std::size_t> widths;
  for (const auto& n : names) widths.push_back(std::max<std::size_t>(n.size(), 6));
  widths.push_back(6);
  std::size_t group = 0;
  for (std::size_t w : widths) group += w + 2;
  std::ostringstream os;
  auto pad = [](const std::string& s, std::size_t w) {
    return std::string(w > s.size() ? w - s.size() : 0, ' ') + s;
  };
  os << std::string(label, ' ') << " |" << pad("original", group - 1) << " |"
     << pad("augmented", group - 1) << " |\n";
  os << pad("config", label) << " |";
  for (int g = 0; g < 2; ++g) {
    for (std::size_t k = 0; k < widths.size(); ++k)
      os << "  " << pad(k < names.size() ? names[k] : "mAP", widths[k]);
    os << " |";
  }
  os << " status\n";
  char buf[32];
  for (const auto& r : rows) {
    os << pad(r.name, label) << " |";
    for (const auto* rep : {&r.original, &r.augmented}) {
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (*rep) {
          std::snprintf(buf, sizeof(buf), "%.2f",
                        k < names.size() ? (*rep)->ap_percent[k] : (*rep)->map_percent);
          os << "  " << pad(buf, widths[k]);
        } else {
          os << "  " << pad("nan", widths[k]);
        }
      }
      os << " |";
    }
    os << ' ' << r.status << '\n';
  }
  return os.str();
}

std::vector<AblationRow> select_rows(const std::string& spec) {
  if (spec.empty()) return ablation_rows();
  std::vector<AblationRow> out;
  for (const auto& raw : split(spec, ',')) {
    const std::string name = trim(raw);
    const auto& all = ablation_rows();
    auto it = std::find_if(all.begin(), all.end(),
                           [&](const AblationRow& r) { return r.name == name; });
    if (it == all.end()) throw ValidationError("unknown ablation row `" + name + "`");
    out.push_back(*it);
  }
  return out;
}

int code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return kExitValidation;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitIo;
}

int cmd_ablate(const ConfigArgs& args, const AblateArgs& a, std::ostream& out,
               std::ostream& err) {
  KeyValues base = resolve_config(args, training_keys(), true);
  for (const char* k : {"use_residual", "use_channel_attention", "use_domain"})
    if (base.has(k)) throw ValidationError(std::string(k) + " is set per ablation row");
  const std::vector<AblationRow> rows = select_rows(a.rows);
  check_unit_interval(a.conf, "conf");
  const DatasetManifest original = DatasetManifest::load(a.val_original);
  const DatasetManifest augmented = DatasetManifest::load(a.val_augmented);
  const auto names = class_names_for(DatasetManifest::load(a.train, false), a.classes);
  make_dir(a.out);
  KeyValues resolved = base;
  resolved.set("train", a.train);
  resolved.set("val_original", a.val_original);
  resolved.set("val_augmented", a.val_augmented);
  resolved.set("conf", format_double(a.conf));
  resolved.set("nms", format_double(a.nms));
  std::string row_names;
  for (const auto& r : rows) row_names += (row_names.empty() ? "" : ",") + r.name;
  resolved.set("rows", row_names);
  write_text(fs::path(a.out) / kResolvedConfig, resolved.serialize());

  std::vector<RowOutcome> outcomes;
  int first_error = kExitOk;
  for (const auto& row : rows) {
    RowOutcome o;
    o.name = row.name;
    const fs::path dir = fs::path(a.out) / "rows" / row.name;
    try {
      KeyValues kv = base;
      kv.set("use_residual", row.use_residual ? "true" : "false");
      kv.set("use_channel_attention", row.use_channel_attention ? "true" : "false");
      kv.set("use_domain", row.use_domain ? "true" : "false");
      out << "== " << row.name << "\n";
      TrainedModel m = train_pipeline(kv, a.train, dir.string(), out);
      const EvalConfig ecfg;
      const auto det_o = detect_pipeline(m.net, a.val_original, a.conf, a.nms, "");
      save_dump(dir / "detections_original.txt", det_o);
      o.original = eval_pipeline(det_o, original, names, ecfg);
      const auto det_a = detect_pipeline(m.net, a.val_augmented, a.conf, a.nms, "");
      save_dump(dir / "detections_augmented.txt", det_a);
      o.augmented = eval_pipeline(det_a, augmented, names, ecfg);
    } catch (const Error& e) {
      o.status = std::string("error: ") + e.what();
      std::replace(o.status.begin(), o.status.end(), ',', ';');
      std::replace(o.status.begin(), o.status.end(), '\n', ' ');
      o.code = code_for(e);
      if (first_error == kExitOk) first_error = o.code;
      err << "row " << row.name << " failed: " << e.what() << "\n";
    }
    outcomes.push_back(std::move(o));
  }
  write_text(fs::path(a.out) / "ablation.csv", ablation_csv(outcomes, names));
  const std::string table = ablation_text(outcomes, names);
  write_text(fs::path(a.out) / "ablation.txt", table);
  out << table;
  return first_error;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ADOD underwater detector: data generation, training, detection, evaluation"};
  app.name("adod");
  app.require_subcommand(1);

  ConfigArgs gen_cfg;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset with manifest");
  gen->add_option("--out", gen_out, "output directory")->required();
  add_config_options(gen, gen_cfg);
  add_keyed(gen, gen_cfg, "--seed", "seed", "random seed (falls back to ADOD_SEED)");
  add_keyed(gen, gen_cfg, "--n", "n", "number of images");
  add_keyed(gen, gen_cfg, "--classes", "classes", "number of object classes");
  add_keyed(gen, gen_cfg, "--domains", "domains", "number of water-cast domains");
  add_keyed(gen, gen_cfg, "--size", "size", "image side in pixels");
  add_keyed(gen, gen_cfg, "--max-objects", "max_objects", "objects per image upper bound");
  add_keyed(gen, gen_cfg, "--min-object", "min_object", "smallest object side (fraction)");
  add_keyed(gen, gen_cfg, "--max-object", "max_object", "largest object side (fraction)");
  add_keyed(gen, gen_cfg, "--preset", "preset",
            "apply one cast to every image (identity, type1..type8)");

  ConfigArgs train_cfg;
  std::string train_data, train_out;
  auto* tr = app.add_subcommand("train", "train a detector on a manifest");
  tr->add_option("--data", train_data, "training manifest")->required();
  tr->add_option("--out", train_out, "output directory")->required();
  add_config_options(tr, train_cfg);
  add_keyed(tr, train_cfg, "--seed", "seed", "random seed (falls back to ADOD_SEED)");
  add_keyed(tr, train_cfg, "--epochs", "epochs", "number of epochs");
  add_keyed(tr, train_cfg, "--batch-size", "batch_size", "images per batch");
  add_keyed(tr, train_cfg, "--lr", "learning_rate", "Adam learning rate");

  DetectArgs det;
  auto* de = app.add_subcommand("detect", "run a checkpoint over a manifest");
  de->add_option("--checkpoint", det.checkpoint, "checkpoint file")->required();
  de->add_option("--config", det.config,
                 "network config (default: resolved-config beside the checkpoint)");
  de->add_option("--data", det.data, "manifest to run on")->required();
  de->add_option("--out", det.out, "output directory")->required();
  de->add_option("--conf", det.conf, "confidence threshold in [0,1]");
  de->add_option("--nms", det.nms, "NMS IoU threshold");
  de->add_option("--batch-size", det.batch, "images per forward pass");
  de->add_flag("--overlays", det.overlays, "also write annotated PPM images");

  EvalArgs ev;
  auto* ea = app.add_subcommand("eval", "score a detection dump against a manifest");
  ea->add_option("--detections", ev.detections, "detection dump")->required();
  ea->add_option("--data", ev.data, "manifest with ground truth")->required();
  ea->add_option("--classes", ev.classes, "class-name file (default: classes.txt beside manifest)");
  ea->add_option("--out", ev.out, "output directory")->required();
  ea->add_option("--format", ev.formats, "report formats: text, csv, json")->delimiter(',');
  ea->add_option("--iou", ev.iou, "IoU needed for a true positive");
  ea->add_option("--interpolation", ev.interpolation, "all-point or 11-point");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference checks of every block");
  g->add_option("--seed", gc.seed, "random seed (falls back to ADOD_SEED)");
  g->add_option("--tolerance", gc.tolerance, "relative tolerance per block");
  g->add_option("--chain-tolerance", gc.chain_tolerance, "relative tolerance end to end");
  g->add_option("--sample", gc.sample, "fraction of detector parameters probed end to end");
  g->add_option("--epsilon", gc.epsilon, "central-difference step");
  g->add_flag("--no-chain", gc.no_chain, "skip the end-to-end detector check");
  g->add_option("--inject-fault", gc.inject_fault,
                "append a wrong-gradient op to one category (harness self-test)");
  g->add_option("--out", gc.out, "directory for the report");

  ConfigArgs abl_cfg;
  AblateArgs ab;
  auto* abl = app.add_subcommand("ablate", "train and score the ablation rows");
  abl->add_option("--train", ab.train, "training manifest")->required();
  abl->add_option("--val-original", ab.val_original, "validation manifest, original water")
      ->required();
  abl->add_option("--val-augmented", ab.val_augmented, "validation manifest, strongest cast")
      ->required();
  abl->add_option("--out", ab.out, "output directory")->required();
  abl->add_option("--classes", ab.classes, "class-name file");
  abl->add_option("--rows", ab.rows, "comma-separated subset of rows (default: all eight)");
  abl->add_option("--conf", ab.conf, "confidence threshold for scoring");
  abl->add_option("--nms", ab.nms, "NMS IoU threshold");
  add_config_options(abl, abl_cfg);
  add_keyed(abl, abl_cfg, "--seed", "seed", "random seed (falls back to ADOD_SEED)");
  add_keyed(abl, abl_cfg, "--epochs", "epochs", "number of epochs per row");
  add_keyed(abl, abl_cfg, "--batch-size", "batch_size", "images per batch");
  add_keyed(abl, abl_cfg, "--lr", "learning_rate", "Adam learning rate");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_cfg, gen_out, out);
    if (tr->parsed()) return cmd_train(train_cfg, train_data, train_out, out);
    if (de->parsed()) return cmd_detect(det, out);
    if (ea->parsed()) return cmd_eval(ev, out);
    if (g->parsed()) return cmd_gradcheck(gc, out);
    if (abl->parsed()) return cmd_ablate(abl_cfg, ab, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitValidation;
}

}  // namespace adod
