#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adod/postprocess.hpp"
#include "adod/tensor.hpp"

namespace adod {

// YOLO label convention: normalized center format.
struct GroundTruthBox {
  std::size_t class_id = 0;
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  BBox to_bbox() const { return BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}.clamped(); }
  void validate(std::size_t num_classes = SIZE_MAX) const;
};

// One `class cx cy w h` per line.
std::vector<GroundTruthBox> parse_labels(const std::string& text,
                                         const std::string& origin = "<labels>");
std::vector<GroundTruthBox> parse_label_file(const std::string& path);
std::string format_labels(const std::vector<GroundTruthBox>& boxes);

// Binary PPM (P6) or PGM (P5, replicated to 3 channels) with maxval 255.
Tensor load_image(const std::string& path);
Tensor decode_netpbm(const std::string& bytes, const std::string& origin = "<image>");
std::string encode_ppm(const Tensor& image);  // [3,H,W] in [0,1], rounded to 8 bits
void save_ppm(const std::string& path, const Tensor& image);
// Width/height from the header without decoding pixels.
std::pair<std::size_t, std::size_t> read_netpbm_size(const std::string& path);

// Maps normalized source coordinates into the letterboxed square and back.
struct LetterboxTransform {
  std::size_t src_width = 0, src_height = 0, target = 0;
  std::size_t content_width = 0, content_height = 0;
  std::size_t pad_left = 0, pad_top = 0;

  static LetterboxTransform make(std::size_t src_width, std::size_t src_height,
                                 std::size_t target);
  BBox forward(const BBox& b) const;
  BBox inverse(const BBox& b) const;
  GroundTruthBox forward(const GroundTruthBox& g) const;
};

struct Letterboxed {
  Tensor image;  // [3, target, target]
  LetterboxTransform transform;
};

// Aspect-preserving nearest-neighbor resize with centered 0.5-gray padding.
Letterboxed resize_letterbox(const Tensor& image, std::size_t target);

struct WaterCastParams {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> offset{0.0, 0.0, 0.0};
  double attenuation = 0.0;  // exp(-attenuation * row / H)
  std::size_t blur_radius = 0;
  double contrast = 1.0;
  int preset_id = 0;  // 0 = identity, 1..8 = type1..type8

  static WaterCastParams identity() { return {}; }
  // type1 (mild) .. type8 (strongest); 0 is identity.
  static WaterCastParams preset(int type);
  static WaterCastParams parse_preset(const std::string& name);
  std::string preset_name() const;
  void validate() const;
};

Tensor apply_water_cast(const Tensor& image, const WaterCastParams& params);

struct Sample {
  std::string image_path;  // as written in the manifest
  std::string label_path;
  std::size_t domain_id = 0;
  std::size_t width = 0, height = 0;
};

struct DatasetManifest {
  std::string base_dir;  // directory relative paths resolve against
  std::vector<Sample> samples;

  std::string resolve(const std::string& path) const;
  // `image<TAB>label<TAB>domain` lines; '#' comments allowed.
  static DatasetManifest load(const std::string& path, bool check_files = true);
  std::string serialize() const;
  void save(const std::string& path) const;
  std::size_t num_domains() const;
};

std::vector<std::string> load_class_names(const std::string& path);
void save_class_names(const std::string& path, const std::vector<std::string>& names);

struct SyntheticConfig {
  std::uint64_t seed = 0;
  std::size_t num_images = 20;
  std::size_t num_classes = 5;
  std::size_t num_domains = 1;
  std::size_t image_size = 64;
  std::size_t max_objects = 3;
  double min_object = 0.2;  // fraction of image side
  double max_object = 0.45;
  // Applied to every image instead of the per-domain preset.
  std::optional<WaterCastParams> force_cast;

  void validate() const;
};

struct SyntheticScene {
  Tensor clean;   // before any cast
  Tensor image;   // after the domain's cast
  std::vector<GroundTruthBox> boxes;
  std::size_t domain_id = 0;
};

// Preset applied to images of domain d: identity for d = 0, otherwise spread
// so the last domain receives type8.
WaterCastParams domain_cast(std::size_t domain_id, std::size_t num_domains);
std::array<double, 3> class_color(std::size_t class_id, std::size_t num_classes);
// Deterministic render of image `index` (seed derived from seed ^ index).
SyntheticScene synthesize_scene(const SyntheticConfig& cfg, std::size_t index);
DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg,
                                           const std::string& out_dir);

// Manifest samples loaded, letterboxed to the network width, boxes mapped.
struct LoadedSample {
  Tensor image;  // [3, W, W]
  std::vector<GroundTruthBox> boxes;
  std::size_t domain_id = 0;
  LetterboxTransform transform;
};
std::vector<LoadedSample> load_samples(const DatasetManifest& manifest, std::size_t input_width);

}  // namespace adod
