#include "adod/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "adod/config.hpp"
#include "adod/error.hpp"
#include "adod/evaluation.hpp"
#include "adod/rng.hpp"

namespace fs = std::filesystem;

namespace adod {

void GroundTruthBox::validate(std::size_t num_classes) const {
  if (class_id >= num_classes)
    throw ValidationError("class_id " + std::to_string(class_id) + " out of range");
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(cx)) throw ValidationError("cx out of range [0,1]");
  if (!in01(cy)) throw ValidationError("cy out of range [0,1]");
  if (!(w > 0.0 && w <= 1.0)) throw ValidationError("w out of range (0,1]");
  if (!(h > 0.0 && h <= 1.0)) throw ValidationError("h out of range (0,1]");
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

bool parse_number(const std::string& tok, double& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size() && std::isfinite(out);
}

}  // namespace

std::vector<GroundTruthBox> parse_labels(const std::string& text, const std::string& origin) {
  std::vector<GroundTruthBox> boxes;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  static const char* kFields[] = {"class", "cx", "cy", "w", "h"};
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string tok;
    while (ls >> tok) toks.push_back(tok);
    if (toks.empty()) continue;
    const std::string where = origin + " line " + std::to_string(lineno);
    if (toks.size() != 5)
      throw ValidationError(where + ": expected 5 fields `class cx cy w h`, got " +
                            std::to_string(toks.size()));
    double v[5];
    for (int i = 0; i < 5; ++i)
      if (!parse_number(toks[i], v[i]))
        throw ValidationError(where + ": non-numeric " + kFields[i] + " `" + toks[i] + "`");
    if (v[0] < 0 || v[0] != std::floor(v[0]))
      throw ValidationError(where + ": class must be a nonnegative integer");
    GroundTruthBox b{static_cast<std::size_t>(v[0]), v[1], v[2], v[3], v[4]};
    for (int i = 1; i < 5; ++i) {
      const bool ok = i <= 2 ? (v[i] >= 0.0 && v[i] <= 1.0) : (v[i] > 0.0 && v[i] <= 1.0);
      if (!ok)
        throw ValidationError(where + ": " + kFields[i] + " out of range (" + toks[i] + ")");
    }
    boxes.push_back(b);
  }
  return boxes;
}

std::vector<GroundTruthBox> parse_label_file(const std::string& path) {
  return parse_labels(read_file(path), path);
}

std::string format_labels(const std::vector<GroundTruthBox>& boxes) {
  std::string out;
  char buf[128];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof(buf), "%zu %.6f %.6f %.6f %.6f\n", b.class_id, b.cx, b.cy, b.w,
                  b.h);
    out += buf;
  }
  return out;
}

namespace {

struct NetpbmHeader {
  char kind = 0;  // '5' or '6'
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_netpbm_header(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw IoError(origin + ": bad magic (expected P5 or P6)");
  NetpbmHeader h;
  h.kind = bytes[1];
  std::size_t pos = 2;
  auto next_number = [&](const char* what) {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    if (pos == start) throw IoError(origin + ": malformed header (" + what + ")");
    return v;
  };
  h.width = next_number("width");
  h.height = next_number("height");
  h.maxval = next_number("maxval");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw IoError(origin + ": malformed header terminator");
  h.data_offset = pos + 1;
  if (h.width == 0 || h.height == 0) throw IoError(origin + ": zero image extent");
  if (h.maxval != 255)
    throw IoError(origin + ": unsupported maxval " + std::to_string(h.maxval) +
                  " (only 255 is supported)");
  return h;
}

}  // namespace

Tensor decode_netpbm(const std::string& bytes, const std::string& origin) {
  const NetpbmHeader h = parse_netpbm_header(bytes, origin);
  const std::size_t channels = h.kind == '6' ? 3 : 1;
  const std::size_t need = h.width * h.height * channels;
  if (bytes.size() - h.data_offset < need) throw IoError(origin + ": truncated pixel data");
  Tensor img({3, h.height, h.width});
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  const std::size_t plane = h.width * h.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const unsigned char v = channels == 3 ? px[i * 3 + c] : px[i];
      img[c * plane + i] = static_cast<double>(v) / 255.0;
    }
  return img;
}

Tensor load_image(const std::string& path) { return decode_netpbm(read_file(path), path); }

std::pair<std::size_t, std::size_t> read_netpbm_size(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string head(256, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const NetpbmHeader h = parse_netpbm_header(head, path);
  return {h.width, h.height};
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ValidationError("encode_ppm expects [3,H,W], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * plane + i], 0.0, 1.0);
      out[header + i * 3 + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  return out;
}

void save_ppm(const std::string& path, const Tensor& image) { write_file(path, encode_ppm(image)); }

LetterboxTransform LetterboxTransform::make(std::size_t src_width, std::size_t src_height,
                                            std::size_t target) {
  if (src_width == 0 || src_height == 0 || target == 0)
    throw ValidationError("letterbox extents must be positive");
  LetterboxTransform t;
  t.src_width = src_width;
  t.src_height = src_height;
  t.target = target;
  const double scale = std::min(static_cast<double>(target) / src_width,
                                static_cast<double>(target) / src_height);
  t.content_width = std::clamp<std::size_t>(std::lround(src_width * scale), 1, target);
  t.content_height = std::clamp<std::size_t>(std::lround(src_height * scale), 1, target);
  t.pad_left = (target - t.content_width) / 2;
  t.pad_top = (target - t.content_height) / 2;
  return t;
}

BBox LetterboxTransform::forward(const BBox& b) const {
  const double T = static_cast<double>(target);
  auto fx = [&](double x) { return (x * content_width + pad_left) / T; };
  auto fy = [&](double y) { return (y * content_height + pad_top) / T; };
  return {fx(b.x_min), fy(b.y_min), fx(b.x_max), fy(b.y_max)};
}

BBox LetterboxTransform::inverse(const BBox& b) const {
  const double T = static_cast<double>(target);
  auto ix = [&](double x) { return (x * T - pad_left) / content_width; };
  auto iy = [&](double y) { return (y * T - pad_top) / content_height; };
  return BBox{ix(b.x_min), iy(b.y_min), ix(b.x_max), iy(b.y_max)}.clamped();
}

GroundTruthBox LetterboxTransform::forward(const GroundTruthBox& g) const {
  const double T = static_cast<double>(target);
  return {g.class_id, (g.cx * content_width + pad_left) / T,
          (g.cy * content_height + pad_top) / T, g.w * content_width / T,
          g.h * content_height / T};
}

Letterboxed resize_letterbox(const Tensor& image, std::size_t target) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ValidationError("resize_letterbox expects [3,H,W], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  Letterboxed out{Tensor::full({3, target, target}, 0.5), LetterboxTransform::make(w, h, target)};
  const auto& t = out.transform;
  for (std::size_t y = 0; y < t.content_height; ++y) {
    const std::size_t sy = std::min(h - 1, (2 * y + 1) * h / (2 * t.content_height));
    for (std::size_t x = 0; x < t.content_width; ++x) {
      const std::size_t sx = std::min(w - 1, (2 * x + 1) * w / (2 * t.content_width));
      for (std::size_t c = 0; c < 3; ++c)
        out.image[(c * target + y + t.pad_top) * target + x + t.pad_left] =
            image[(c * h + sy) * w + sx];
    }
  }
  return out;
}

WaterCastParams WaterCastParams::preset(int type) {
  if (type < 0 || type > 8) throw ValidationError("water cast preset must be type1..type8");
  if (type == 0) return identity();
  const double t = type / 8.0;
  WaterCastParams p;
  p.gain = {1.0 - 0.65 * t, 1.0 - 0.1 * t, 1.0 + 0.05 * t};
  p.offset = {0.0, 0.06 * t, 0.12 * t};
  p.attenuation = 0.8 * t;
  p.blur_radius = type >= 6 ? 2 : (type >= 3 ? 1 : 0);
  p.contrast = 1.0 - 0.45 * t;
  p.preset_id = type;
  return p;
}

WaterCastParams WaterCastParams::parse_preset(const std::string& name) {
  if (name == "identity") return identity();
  if (name.size() == 5 && name.rfind("type", 0) == 0 && name[4] >= '1' && name[4] <= '8')
    return preset(name[4] - '0');
  throw ValidationError("unknown water cast preset `" + name + "` (identity, type1..type8)");
}

std::string WaterCastParams::preset_name() const {
  return preset_id == 0 ? "identity" : "type" + std::to_string(preset_id);
}

void WaterCastParams::validate() const {
  for (double g : gain)
    if (!(g > 0.0)) throw ValidationError("water cast gains must be > 0");
  if (!(attenuation >= 0.0)) throw ValidationError("water cast attenuation must be >= 0");
  if (!(contrast > 0.0)) throw ValidationError("water cast contrast must be > 0");
}

Tensor apply_water_cast(const Tensor& image, const WaterCastParams& p) {
  p.validate();
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ValidationError("apply_water_cast expects [3,H,W], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y) {
      const double att = std::exp(-p.attenuation * static_cast<double>(y) / static_cast<double>(h));
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = (c * h + y) * w + x;
        const double v = p.contrast * (p.gain[c] * image[i] * att + p.offset[c]) +
                         (1.0 - p.contrast) * 0.5;
        out[i] = std::clamp(v, 0.0, 1.0);
      }
    }
  if (p.blur_radius == 0) return out;
  // Separable box blur; windows are truncated at the border.
  const long r = static_cast<long>(p.blur_radius);
  Tensor tmp(image.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        int n = 0;
        for (long dx = -r; dx <= r; ++dx) {
          const long xx = static_cast<long>(x) + dx;
          if (xx < 0 || xx >= static_cast<long>(w)) continue;
          s += out[(c * h + y) * w + xx];
          ++n;
        }
        tmp[(c * h + y) * w + x] = s / n;
      }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        int n = 0;
        for (long dy = -r; dy <= r; ++dy) {
          const long yy = static_cast<long>(y) + dy;
          if (yy < 0 || yy >= static_cast<long>(h)) continue;
          s += tmp[(c * h + yy) * w + x];
          ++n;
        }
        out[(c * h + y) * w + x] = s / n;
      }
  return out;
}

std::string DatasetManifest::resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (fs::path(base_dir) / p).string();
}

DatasetManifest DatasetManifest::load(const std::string& path, bool check_files) {
  const std::string text = read_file(path);
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = path + " line " + std::to_string(lineno);
    if (fields.size() != 3)
      throw ValidationError(where + ": expected image<TAB>label<TAB>domain");
    Sample s;
    s.image_path = fields[0];
    s.label_path = fields[1];
    std::size_t d = 0;
    auto res = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), d);
    if (res.ec != std::errc() || res.ptr != fields[2].data() + fields[2].size())
      throw ValidationError(where + ": domain_id must be a nonnegative integer");
    s.domain_id = d;
    if (check_files) {
      for (const auto* f : {&s.image_path, &s.label_path})
        if (!fs::exists(m.resolve(*f))) throw IoError(where + ": missing file " + m.resolve(*f));
      std::tie(s.width, s.height) = read_netpbm_size(m.resolve(s.image_path));
    }
    m.samples.push_back(std::move(s));
  }
  return m;
}

std::string DatasetManifest::serialize() const {
  std::string out;
  for (const auto& s : samples)
    out += s.image_path + "\t" + s.label_path + "\t" + std::to_string(s.domain_id) + "\n";
  return out;
}

void DatasetManifest::save(const std::string& path) const { write_file(path, serialize()); }

std::size_t DatasetManifest::num_domains() const {
  std::size_t d = 0;
  for (const auto& s : samples) d = std::max(d, s.domain_id + 1);
  return d;
}

std::vector<std::string> load_class_names(const std::string& path) {
  std::istringstream is(read_file(path));
  std::vector<std::string> names;
  std::string line;
  while (std::getline(is, line)) {
    const std::string t = trim(line);
    if (!t.empty()) names.push_back(t);
  }
  if (names.empty()) throw ValidationError("class-name file " + path + " is empty");
  return names;
}

void save_class_names(const std::string& path, const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += n + "\n";
  write_file(path, out);
}

void SyntheticConfig::validate() const {
  if (num_images < 1) throw ValidationError("n (num_images) must be >= 1");
  if (num_classes < 1) throw ValidationError("classes must be >= 1");
  if (num_domains < 1) throw ValidationError("domains must be >= 1");
  if (image_size < 16) throw ValidationError("size must be >= 16");
  if (max_objects < 1) throw ValidationError("max_objects must be >= 1");
  if (!(min_object > 0.0 && min_object <= max_object && max_object <= 1.0))
    throw ValidationError("object size range must satisfy 0 < min <= max <= 1");
  if (force_cast) force_cast->validate();
}

WaterCastParams domain_cast(std::size_t domain_id, std::size_t num_domains) {
  if (domain_id == 0 || num_domains <= 1) return WaterCastParams::identity();
  const auto type = static_cast<int>(
      std::lround(8.0 * static_cast<double>(domain_id) / static_cast<double>(num_domains - 1)));
  return WaterCastParams::preset(std::clamp(type, 1, 8));
}

std::array<double, 3> class_color(std::size_t class_id, std::size_t num_classes) {
  static constexpr std::array<std::array<double, 3>, 5> kPalette{{{0.60, 0.10, 0.65},
                                                                  {0.95, 0.50, 0.10},
                                                                  {0.35, 0.20, 0.05},
                                                                  {0.95, 0.90, 0.60},
                                                                  {0.15, 0.85, 0.20}}};
  if (num_classes <= kPalette.size()) return kPalette[class_id];
  // HSV hue wheel at full saturation/value.
  const double hue = 6.0 * static_cast<double>(class_id) / static_cast<double>(num_classes);
  const double f = hue - std::floor(hue);
  switch (static_cast<int>(hue) % 6) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

namespace {

// Shape of class k inside its box, in box-local coordinates u,v in [-1,1].
bool inside_shape(std::size_t class_id, double u, double v) {
  switch (class_id % 5) {
    case 0: return u * u + v * v <= 1.0;                       // disc
    case 1: return std::abs(u) + std::abs(v) <= 1.0;           // diamond
    case 2: return std::pow(std::abs(u), 4) + std::pow(std::abs(v), 4) <= 1.0;  // capsule
    case 3: return std::abs(u) <= (v + 1.0) / 2.0;             // triangle, apex up
    default: return static_cast<int>(std::floor((u + 1.0) * 2.5)) % 2 == 0;  // stripes
  }
}

}  // namespace

SyntheticScene synthesize_scene(const SyntheticConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng(splitmix64(cfg.seed ^ static_cast<std::uint64_t>(index)));
  const std::size_t S = cfg.image_size;
  SyntheticScene scene;
  scene.domain_id = index % cfg.num_domains;
  Tensor img({3, S, S});
  const std::array<double, 3> base{0.12 + 0.06 * rng.uniform(), 0.30 + 0.1 * rng.uniform(),
                                   0.40 + 0.1 * rng.uniform()};
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double shade = 0.9 + 0.2 * static_cast<double>(y) / static_cast<double>(S);
      for (std::size_t c = 0; c < 3; ++c)
        img[(c * S + y) * S + x] =
            std::clamp(base[c] * shade + 0.16 * (rng.uniform() - 0.5), 0.0, 1.0);
    }

  const std::size_t count = 1 + static_cast<std::size_t>(rng.below(cfg.max_objects));
  std::vector<BBox> placed;
  for (std::size_t o = 0; o < count; ++o) {
    const std::size_t cls = static_cast<std::size_t>(rng.below(cfg.num_classes));
    for (int attempt = 0; attempt < 20; ++attempt) {
      const auto side = [&] {
        const double frac = rng.uniform(cfg.min_object, cfg.max_object);
        return std::clamp<std::size_t>(std::lround(frac * S), 2, S);
      };
      const std::size_t bw = side(), bh = side();
      const std::size_t x0 = static_cast<std::size_t>(rng.below(S - bw + 1));
      const std::size_t y0 = static_cast<std::size_t>(rng.below(S - bh + 1));
      const BBox box{static_cast<double>(x0) / S, static_cast<double>(y0) / S,
                     static_cast<double>(x0 + bw) / S, static_cast<double>(y0 + bh) / S};
      const bool overlaps = std::any_of(placed.begin(), placed.end(),
                                        [&](const BBox& p) { return iou(p, box) > 0.1; });
      if (overlaps) continue;
      placed.push_back(box);
      const auto color = class_color(cls, cfg.num_classes);
      for (std::size_t y = y0; y < y0 + bh; ++y)
        for (std::size_t x = x0; x < x0 + bw; ++x) {
          const double u = 2.0 * (static_cast<double>(x - x0) + 0.5) / bw - 1.0;
          const double v = 2.0 * (static_cast<double>(y - y0) + 0.5) / bh - 1.0;
          if (!inside_shape(cls, u, v)) continue;
          for (std::size_t c = 0; c < 3; ++c)
            img[(c * S + y) * S + x] =
                std::clamp(color[c] + 0.06 * (rng.uniform() - 0.5), 0.0, 1.0);
        }
      scene.boxes.push_back({cls, (x0 + bw / 2.0) / S, (y0 + bh / 2.0) / S,
                             static_cast<double>(bw) / S, static_cast<double>(bh) / S});
      break;
    }
  }
  scene.clean = img;
  const WaterCastParams cast =
      cfg.force_cast ? *cfg.force_cast : domain_cast(scene.domain_id, cfg.num_domains);
  scene.image = apply_water_cast(img, cast);
  return scene;
}

DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (!ec) fs::create_directories(fs::path(out_dir) / "labels", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  DatasetManifest m;
  m.base_dir = out_dir;
  for (std::size_t i = 0; i < cfg.num_images; ++i) {
    const SyntheticScene scene = synthesize_scene(cfg, i);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%06zu", i);
    Sample s;
    s.image_path = std::string("images/") + stem + ".ppm";
    s.label_path = std::string("labels/") + stem + ".txt";
    s.domain_id = scene.domain_id;
    s.width = s.height = cfg.image_size;
    save_ppm(m.resolve(s.image_path), scene.image);
    write_file(m.resolve(s.label_path), format_labels(scene.boxes));
    m.samples.push_back(std::move(s));
  }
  m.save((fs::path(out_dir) / "manifest.tsv").string());
  std::vector<std::string> names = default_class_names();
  if (cfg.num_classes != names.size()) {
    names.clear();
    for (std::size_t k = 0; k < cfg.num_classes; ++k) names.push_back("class" + std::to_string(k));
  }
  save_class_names((fs::path(out_dir) / "classes.txt").string(), names);
  return m;
}

std::vector<LoadedSample> load_samples(const DatasetManifest& manifest, std::size_t input_width) {
  std::vector<LoadedSample> out;
  out.reserve(manifest.samples.size());
  for (const auto& s : manifest.samples) {
    const Tensor img = load_image(manifest.resolve(s.image_path));
    Letterboxed lb = resize_letterbox(img, input_width);
    LoadedSample ls;
    ls.image = std::move(lb.image);
    ls.transform = lb.transform;
    ls.domain_id = s.domain_id;
    for (const auto& b : parse_label_file(manifest.resolve(s.label_path)))
      ls.boxes.push_back(lb.transform.forward(b));
    out.push_back(std::move(ls));
  }
  return out;
}

}  // namespace adod
