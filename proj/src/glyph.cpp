#include "hesup/glyph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <thread>

#include <nlohmann/json.hpp>

#include "hesup/rng.hpp"

namespace hesup {

namespace {

using Pt = std::pair<double, double>;

Polyline arc(double cx, double cy, double rx, double ry, double a0, double a1, int n) {
  Polyline p;
  for (int i = 0; i <= n; ++i) {
    const double a = a0 + (a1 - a0) * i / n;
    p.emplace_back(cx + rx * std::cos(a), cy + ry * std::sin(a));
  }
  return p;
}

Polyline ellipse(double cx, double cy, double rx, double ry) {
  return arc(cx, cy, rx, ry, 0.0, 2.0 * std::numbers::pi, 16);
}

std::vector<GlyphSkeleton> make_skeletons() {
  std::vector<GlyphSkeleton> g;
  auto put = [&](const std::string& id, std::vector<Polyline> strokes) {
    g.push_back({id, std::move(strokes)});
  };

  put("0", {ellipse(.5, .5, .22, .33)});
  put("1", {{{.35, .3}, {.5, .15}, {.5, .85}}, {{.35, .85}, {.65, .85}}});
  put("2", {{{.27, .32}, {.32, .18}, {.5, .15}, {.68, .2}, {.72, .33}, {.62, .5}, {.25, .85}, {.75, .85}}});
  put("3", {{{.28, .2}, {.5, .15}, {.7, .25}, {.68, .42}, {.48, .5}},
            {{.48, .5}, {.7, .57}, {.73, .72}, {.55, .85}, {.3, .8}}});
  put("4", {{{.65, .85}, {.65, .15}, {.25, .62}, {.78, .62}}});
  put("5", {{{.72, .15}, {.3, .15}, {.28, .48}, {.55, .44}, {.73, .55}, {.72, .72}, {.52, .85}, {.28, .8}}});
  put("6", {{{.68, .17}, {.45, .15}, {.3, .3}, {.26, .55}, {.3, .75}, {.5, .85}, {.68, .78}, {.72, .62},
             {.6, .5}, {.4, .52}, {.28, .62}}});
  put("7", {{{.25, .15}, {.75, .15}, {.42, .85}}});
  put("8", {ellipse(.5, .32, .17, .17), ellipse(.5, .66, .21, .19)});
  put("9", {{{.32, .83}, {.55, .85}, {.7, .7}, {.74, .45}, {.7, .25}, {.5, .15}, {.32, .22}, {.28, .38},
             {.4, .5}, {.6, .48}, {.72, .38}}});
  put("A", {{{.2, .85}, {.5, .15}, {.8, .85}}, {{.33, .62}, {.67, .62}}});
  put("B", {{{.28, .15}, {.28, .85}},
            {{.28, .15}, {.6, .17}, {.68, .3}, {.6, .47}, {.28, .48}},
            {{.28, .48}, {.64, .5}, {.73, .65}, {.64, .83}, {.28, .85}}});
  put("C", {arc(.5, .5, .25, .35, 0.96, 2.0 * std::numbers::pi - 0.96, 12)});
  put("D", {{{.27, .15}, {.27, .85}},
            {{.27, .15}, {.55, .17}, {.72, .35}, {.74, .5}, {.72, .65}, {.55, .83}, {.27, .85}}});
  put("E", {{{.72, .15}, {.28, .15}, {.28, .85}, {.72, .85}}, {{.28, .5}, {.62, .5}}});
  put("F", {{{.72, .15}, {.28, .15}, {.28, .85}}, {{.28, .5}, {.6, .5}}});
  put("G", {arc(.5, .5, .25, .35, 0.96, 2.0 * std::numbers::pi - 0.96, 12),
            {{.55, .55}, {.75, .55}, {.75, .72}}});
  put("H", {{{.27, .15}, {.27, .85}}, {{.73, .15}, {.73, .85}}, {{.27, .5}, {.73, .5}}});
  put("I", {{{.5, .15}, {.5, .85}}, {{.35, .15}, {.65, .15}}, {{.35, .85}, {.65, .85}}});
  put("J", {{{.68, .15}, {.68, .7}, {.55, .85}, {.38, .83}, {.3, .7}}});
  put("K", {{{.28, .15}, {.28, .85}}, {{.72, .15}, {.28, .52}}, {{.42, .45}, {.74, .85}}});
  put("L", {{{.3, .15}, {.3, .85}, {.72, .85}}});
  put("M", {{{.22, .85}, {.22, .15}, {.5, .6}, {.78, .15}, {.78, .85}}});
  put("N", {{{.27, .85}, {.27, .15}, {.73, .85}, {.73, .15}}});
  put("O", {ellipse(.5, .5, .25, .35)});
  put("P", {{{.28, .85}, {.28, .15}}, {{.28, .15}, {.62, .17}, {.72, .32}, {.62, .48}, {.28, .5}}});
  put("Q", {ellipse(.5, .5, .25, .35), {{.58, .62}, {.78, .85}}});
  put("R", {{{.28, .85}, {.28, .15}}, {{.28, .15}, {.62, .17}, {.72, .32}, {.62, .48}, {.28, .5}},
            {{.5, .5}, {.74, .85}}});
  put("S", {{{.7, .22}, {.52, .15}, {.33, .2}, {.29, .33}, {.4, .45}, {.6, .52}, {.7, .63}, {.66, .78},
             {.48, .85}, {.29, .79}}});
  put("T", {{{.22, .15}, {.78, .15}}, {{.5, .15}, {.5, .85}}});
  put("U", {{{.27, .15}, {.27, .65}, {.33, .8}, {.5, .85}, {.67, .8}, {.73, .65}, {.73, .15}}});
  put("V", {{{.22, .15}, {.5, .85}, {.78, .15}}});
  put("W", {{{.18, .15}, {.33, .85}, {.5, .35}, {.67, .85}, {.82, .15}}});
  put("X", {{{.25, .15}, {.75, .85}}, {{.75, .15}, {.25, .85}}});
  put("Y", {{{.24, .15}, {.5, .5}, {.76, .15}}, {{.5, .5}, {.5, .85}}});
  put("Z", {{{.25, .15}, {.75, .15}, {.25, .85}, {.75, .85}}});
  return g;
}

struct Segment {
  double x0, y0, x1, y1;
  double bx0, by0, bx1, by1;  // bounding box expanded by half stroke width
};

double dist2_to_segment(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = s.x0 + t * dx - px, qy = s.y0 + t * dy - py;
  return qx * qx + qy * qy;
}

constexpr double kJitterAmplitude = 0.015;

}  // namespace

const std::vector<GlyphSkeleton>& builtin_skeletons() {
  static const std::vector<GlyphSkeleton> table = make_skeletons();
  return table;
}

std::vector<std::string> builtin_glyph_ids() {
  std::vector<std::string> ids;
  for (const auto& g : builtin_skeletons()) ids.push_back(g.glyph_id);
  return ids;
}

const GlyphSkeleton& skeleton_for(const std::string& glyph_id) {
  for (const auto& g : builtin_skeletons())
    if (g.glyph_id == glyph_id) return g;
  throw Error("unknown glyph id: " + glyph_id);
}

Image render_glyph(const GlyphSkeleton& skeleton, const FontSpec& spec, size_t size) {
  if (size < 16) throw Error("render size must be >= 16");
  if (skeleton.strokes.empty()) throw Error("empty skeleton for glyph " + skeleton.glyph_id);

  uint64_t sample_seed = spec.jitter_seed;
  for (char ch : skeleton.glyph_id) sample_seed = hash_combine(sample_seed, static_cast<uint64_t>(ch));
  Rng rng(sample_seed);

  const double shear = std::tan(spec.slant * std::numbers::pi / 180.0);
  std::vector<Polyline> strokes;
  for (const Polyline& poly : skeleton.strokes) {
    Polyline q;
    for (auto [x, y] : poly) {
      x += rng.uniform(-kJitterAmplitude, kJitterAmplitude);
      y += rng.uniform(-kJitterAmplitude, kJitterAmplitude);
      q.emplace_back(x + shear * (0.5 - y), y);  // shear about the vertical center
    }
    strokes.push_back(std::move(q));
  }

  // Serif ticks perpendicular to each stroke's end directions.
  if (spec.serif_len > 0) {
    std::vector<Polyline> serifs;
    for (const Polyline& poly : strokes) {
      auto tick = [&](Pt at, Pt toward) {
        double dx = toward.first - at.first, dy = toward.second - at.second;
        const double len = std::hypot(dx, dy);
        if (len == 0) return;
        const double px = -dy / len * spec.serif_len * 0.5;
        const double py = dx / len * spec.serif_len * 0.5;
        serifs.push_back({{at.first - px, at.second - py}, {at.first + px, at.second + py}});
      };
      tick(poly.front(), poly[1]);
      tick(poly.back(), poly[poly.size() - 2]);
    }
    strokes.insert(strokes.end(), serifs.begin(), serifs.end());
  }

  const double half_w = spec.stroke_width * 0.5;
  std::vector<Segment> segs;
  for (const Polyline& poly : strokes)
    for (size_t i = 0; i + 1 < poly.size(); ++i) {
      Segment s{poly[i].first, poly[i].second, poly[i + 1].first, poly[i + 1].second, 0, 0, 0, 0};
      s.bx0 = std::min(s.x0, s.x1) - half_w;
      s.bx1 = std::max(s.x0, s.x1) + half_w;
      s.by0 = std::min(s.y0, s.y1) - half_w;
      s.by1 = std::max(s.y0, s.y1) + half_w;
      segs.push_back(s);
    }

  Image img{size, std::vector<uint8_t>(size * size, 255)};
  const double inv = 1.0 / static_cast<double>(size);
  const double r2 = half_w * half_w;
  for (size_t py = 0; py < size; ++py) {
    for (size_t px = 0; px < size; ++px) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double x = (px + 0.25 + 0.5 * sx) * inv;
          const double y = (py + 0.25 + 0.5 * sy) * inv;
          for (const Segment& s : segs) {
            if (x < s.bx0 || x > s.bx1 || y < s.by0 || y > s.by1) continue;
            if (dist2_to_segment(x, y, s) <= r2) {
              ++hits;
              break;
            }
          }
        }
      img.pixels[py * size + px] = static_cast<uint8_t>(std::lround(255.0 * (1.0 - hits / 4.0)));
    }
  }
  return img;
}

void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for writing: " + path.string());
  f << "P5\n" << img.size << " " << img.size << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw Error("write failed: " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open image: " + path.string());
  std::string magic;
  size_t w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) throw Error("unsupported PGM format: " + path.string());
  f.get();  // single whitespace after header
  if (w != h) throw Error("expected square image: " + path.string());
  Image img{w, std::vector<uint8_t>(w * h)};
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(w * h));
  if (f.gcount() != static_cast<std::streamsize>(w * h))
    throw Error("truncated PGM payload: " + path.string());
  return img;
}

namespace {

// Stratified parameter grid: guarantees pairwise-distinct, well-separated
// font classes at toy scale. Cells are shuffled by the seed and each class
// gets a small within-cell perturbation.
std::vector<FontSpec> sample_font_specs(size_t num_fonts, uint64_t seed) {
  const std::vector<double> widths{0.03, 0.055, 0.08, 0.105, 0.13};
  const std::vector<double> slants{-12, -6, 0, 6, 12};
  const std::vector<double> serifs{0.0, 0.055};
  std::vector<std::array<double, 3>> cells;
  for (double w : widths)
    for (double s : slants)
      for (double e : serifs) cells.push_back({w, s, e});
  if (num_fonts > cells.size())
    throw Error("at most " + std::to_string(cells.size()) + " font classes supported");

  Rng rng(hash_combine(seed, 0xf0a7));
  rng.shuffle(cells);

  // Farthest-point selection keeps the chosen classes spread out in
  // parameter space instead of leaving near-duplicate neighbors to chance.
  auto dist = [&](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return std::abs(a[0] - b[0]) / (widths[1] - widths[0]) +
           std::abs(a[1] - b[1]) / (slants[1] - slants[0]) + (a[2] != b[2] ? 1.0 : 0.0);
  };
  std::vector<std::array<double, 3>> picked{cells[0]};
  std::vector<bool> used(cells.size(), false);
  used[0] = true;
  while (picked.size() < num_fonts) {
    size_t best = 0;
    double best_d = -1;
    for (size_t i = 0; i < cells.size(); ++i) {
      if (used[i]) continue;
      double d = std::numeric_limits<double>::max();
      for (const auto& p : picked) d = std::min(d, dist(cells[i], p));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    used[best] = true;
    picked.push_back(cells[best]);
  }
  cells = std::move(picked);

  std::vector<FontSpec> specs;
  for (size_t i = 0; i < num_fonts; ++i) {
    FontSpec s;
    s.font_id = i;
    s.stroke_width = std::clamp(cells[i][0] + rng.uniform(-0.008, 0.008), 0.02, 0.15);
    s.slant = std::clamp(cells[i][1] + rng.uniform(-2.0, 2.0), -15.0, 15.0);
    s.serif_len = cells[i][2] > 0 ? std::clamp(cells[i][2] + rng.uniform(-0.01, 0.01), 0.0, 0.08) : 0.0;
    s.jitter_seed = hash_combine(seed, i);
    specs.push_back(s);
  }
  return specs;
}

}  // namespace

DatasetManifest generate_dataset(size_t num_fonts, const std::vector<std::string>& glyph_ids,
                                 size_t size, uint64_t seed, const std::filesystem::path& out_dir,
                                 size_t threads) {
  if (num_fonts < 2) throw Error("need at least 2 font classes");
  if (glyph_ids.size() < 2) throw Error("need at least 2 glyphs");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "img", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "img"))
    throw Error("cannot create output directory: " + (out_dir / "img").string());

  DatasetManifest m;
  m.image_size = size;
  m.fonts = sample_font_specs(num_fonts, seed);
  for (const FontSpec& spec : m.fonts)
    for (const std::string& gid : glyph_ids)
      m.samples.push_back({"img/" + std::to_string(spec.font_id) + "_" + gid + ".pgm",
                           spec.font_id, gid});

  std::vector<Image> rendered(m.samples.size());
  auto render_range = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      const Sample& s = m.samples[i];
      rendered[i] = render_glyph(skeleton_for(s.glyph_id), m.fonts[s.font_id], size);
    }
  };
  threads = std::max<size_t>(1, std::min(threads, m.samples.size()));
  if (threads == 1) {
    render_range(0, m.samples.size());
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (m.samples.size() + threads - 1) / threads;
    for (size_t t = 0; t < threads; ++t)
      pool.emplace_back(render_range, t * chunk, std::min((t + 1) * chunk, m.samples.size()));
    for (auto& th : pool) th.join();
  }
  for (size_t i = 0; i < m.samples.size(); ++i) write_pgm(rendered[i], out_dir / m.samples[i].path);

  save_manifest(m, out_dir);
  return m;
}

void split_dataset(DatasetManifest& manifest, size_t holdout_k, uint64_t seed) {
  std::vector<std::string> glyphs;
  for (const Sample& s : manifest.samples)
    if (std::find(glyphs.begin(), glyphs.end(), s.glyph_id) == glyphs.end())
      glyphs.push_back(s.glyph_id);
  if (holdout_k >= glyphs.size())
    throw Error("holdout_k " + std::to_string(holdout_k) + " must be below glyph count " +
                std::to_string(glyphs.size()));

  manifest.split.clear();
  for (const FontSpec& spec : manifest.fonts) {
    std::vector<std::string> shuffled = glyphs;
    Rng rng(hash_combine(hash_combine(seed, 0x5b17), spec.font_id));
    rng.shuffle(shuffled);
    std::vector<std::string> held(shuffled.begin(),
                                  shuffled.begin() + static_cast<ptrdiff_t>(holdout_k));
    for (const Sample& s : manifest.samples) {
      if (s.font_id != spec.font_id) continue;
      const bool test = std::find(held.begin(), held.end(), s.glyph_id) != held.end();
      manifest.split[s.path] = test ? "test" : "train";
    }
  }
}

std::vector<size_t> DatasetManifest::indices_for(const std::string& which) const {
  std::vector<size_t> idx;
  for (size_t i = 0; i < samples.size(); ++i) {
    auto it = split.find(samples[i].path);
    if (it != split.end() && it->second == which) idx.push_back(i);
  }
  return idx;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  nlohmann::json j;
  j["version"] = m.version;
  j["image_size"] = m.image_size;
  j["fonts"] = nlohmann::json::array();
  for (const FontSpec& f : m.fonts)
    j["fonts"].push_back({{"font_id", f.font_id},
                          {"stroke_width", f.stroke_width},
                          {"slant", f.slant},
                          {"serif_len", f.serif_len},
                          {"jitter_seed", f.jitter_seed}});
  j["samples"] = nlohmann::json::array();
  for (const Sample& s : m.samples)
    j["samples"].push_back({{"path", s.path}, {"font_id", s.font_id}, {"glyph_id", s.glyph_id}});
  j["split"] = m.split;

  std::ofstream f(dir / "manifest.json", std::ios::binary);
  if (!f) throw Error("cannot write manifest: " + (dir / "manifest.json").string());
  f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw Error("cannot open manifest: " + (dir / "manifest.json").string());
  nlohmann::json j = nlohmann::json::parse(f);
  DatasetManifest m;
  m.version = j.at("version").get<uint32_t>();
  m.image_size = j.at("image_size").get<size_t>();
  for (const auto& jf : j.at("fonts"))
    m.fonts.push_back({jf.at("font_id").get<size_t>(), jf.at("stroke_width").get<double>(),
                       jf.at("slant").get<double>(), jf.at("serif_len").get<double>(),
                       jf.at("jitter_seed").get<uint64_t>()});
  for (const auto& js : j.at("samples"))
    m.samples.push_back({js.at("path").get<std::string>(), js.at("font_id").get<size_t>(),
                         js.at("glyph_id").get<std::string>()});
  if (j.contains("split")) m.split = j.at("split").get<std::map<std::string, std::string>>();
  return m;
}

std::pair<Tensor<float>, std::vector<size_t>> load_batch(const DatasetManifest& manifest,
                                                         const std::filesystem::path& dir,
                                                         const std::vector<size_t>& indices,
                                                         size_t size) {
  Tensor<float> batch({indices.size(), 1, size, size});
  std::vector<size_t> labels;
  float* out = batch.data().data();
  for (size_t b = 0; b < indices.size(); ++b) {
    const Sample& s = manifest.samples.at(indices[b]);
    Image img = read_pgm(dir / s.path);
    if (img.size != size)
      throw Error("image size " + std::to_string(img.size) + " does not match requested " +
                  std::to_string(size) + ": " + s.path);
    for (size_t i = 0; i < size * size; ++i)
      out[b * size * size + i] = static_cast<float>(img.pixels[i]) / 255.0f - 0.5f;
    labels.push_back(s.font_id);
  }
  return {batch, labels};
}

}  // namespace hesup
