#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hesup/tensor.hpp"

namespace hesup {

using Polyline = std::vector<std::pair<double, double>>;

// Stroke skeleton of one symbol, coordinates in the unit square, y down.
struct GlyphSkeleton {
  std::string glyph_id;
  std::vector<Polyline> strokes;
};

// Typographic parameters defining one synthetic font class. All classes
// share the same skeletons; only these parameters (plus per-sample jitter
// derived from jitter_seed) distinguish them.
struct FontSpec {
  size_t font_id = 0;
  double stroke_width = 0.06;  // fraction of image size, [0.02, 0.15]
  double slant = 0.0;          // shear in degrees, [-15, 15]
  double serif_len = 0.0;      // fraction, [0, 0.08]
  uint64_t jitter_seed = 0;
};

struct Sample {
  std::string path;  // relative to the dataset directory
  size_t font_id = 0;
  std::string glyph_id;
};

struct DatasetManifest {
  uint32_t version = 1;
  size_t image_size = 64;
  std::vector<FontSpec> fonts;
  std::vector<Sample> samples;
  std::map<std::string, std::string> split;  // sample path -> "train" | "test"

  std::vector<size_t> indices_for(const std::string& which) const;
};

struct Image {
  size_t size = 0;
  std::vector<uint8_t> pixels;  // row-major, 0 = ink, 255 = background
};

// The built-in skeleton set: digits 0-9 and uppercase A-Z.
const std::vector<GlyphSkeleton>& builtin_skeletons();
const GlyphSkeleton& skeleton_for(const std::string& glyph_id);
std::vector<std::string> builtin_glyph_ids();

Image render_glyph(const GlyphSkeleton& skeleton, const FontSpec& spec, size_t size);

void write_pgm(const Image& img, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

DatasetManifest generate_dataset(size_t num_fonts, const std::vector<std::string>& glyph_ids,
                                 size_t size, uint64_t seed, const std::filesystem::path& out_dir,
                                 size_t threads = 1);

void split_dataset(DatasetManifest& manifest, size_t holdout_k, uint64_t seed);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);

// Images stacked as N x 1 x size x size, pixel/255 - 0.5; labels are font ids.
std::pair<Tensor<float>, std::vector<size_t>> load_batch(const DatasetManifest& manifest,
                                                         const std::filesystem::path& dir,
                                                         const std::vector<size_t>& indices,
                                                         size_t size);

}  // namespace hesup
