#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "histokt/errors.hpp"
#include "histokt/manifest.hpp"
#include "histokt/png.hpp"
#include "histokt/rng.hpp"

namespace histokt::xfer {

/// One procedural texture class: oriented stripes, a dot lattice, or a
/// checkerboard, with per-image jitter so the class is a distribution.
struct ClassDef {
  std::string name;
  std::string kind = "stripes";  // stripes | dots | checker
  double orientation_deg = 0.0;  // stripes
  double frequency = 4.0;        // stripes: cycles across the patch
  double spacing = 12.0;         // dots: lattice pitch in pixels
  double radius = 3.5;           // dots
  double block = 8.0;            // checker: square size in pixels
};

struct PaletteRange {
  double hue_lo = 0.0, hue_hi = 360.0;
  double sat_lo = 0.3, sat_hi = 0.8;
  double val_lo = 0.4, val_hi = 0.9;
};

/// Foreground/background color ranges; shifting these between domains
/// mimics stain variation while the class geometry stays shared.
struct Palette {
  PaletteRange fg{270.0, 330.0, 0.35, 0.75, 0.35, 0.7};  // hematoxylin-ish
  PaletteRange bg{300.0, 360.0, 0.05, 0.3, 0.75, 0.98};  // eosin-ish
};

struct SplitSizes {
  std::uint32_t train = 100;
  std::uint32_t val = 20;
  std::uint32_t test = 20;
};

/// Deterministic synthetic image domain, the desk-scale stand-in for a
/// real histology dataset.
struct DomainSpec {
  std::string name;
  std::uint32_t patch_size = 64;
  std::vector<ClassDef> classes;
  Palette palette;
  double noise_level = 0.04;
  SplitSizes per_class;  // sample counts per class per split
  LabelMode label_mode = LabelMode::kSingle;

  void validate() const {
    if (name.empty()) throw DataError("domain: name required");
    if (classes.size() < 2) throw DataError("domain: need >= 2 classes");
    if (patch_size < 8) throw DataError("domain: patch_size too small");
    for (const auto& c : classes) {
      if (c.kind != "stripes" && c.kind != "dots" && c.kind != "checker") {
        throw DataError("domain: unknown class kind '" + c.kind + "'");
      }
    }
  }
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (i) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

inline void draw_color(Prng& rng, const PaletteRange& range, double rgb[3]) {
  const double h = rng.next_range(range.hue_lo, range.hue_hi);
  const double s = rng.next_range(range.sat_lo, range.sat_hi);
  const double v = rng.next_range(range.val_lo, range.val_hi);
  hsv_to_rgb(h, s, v, rgb);
}

/// Texture intensity field in [0,1] at pixel (x, y).
struct TextureParams {
  double phase = 0, jitter_x = 0, jitter_y = 0, orient_jit = 0;
};

inline double field_at(const ClassDef& def, const TextureParams& tp, std::uint32_t patch,
                       std::uint32_t x, std::uint32_t y) {
  if (def.kind == "stripes") {
    const double theta = (def.orientation_deg + tp.orient_jit) * 3.141592653589793 / 180.0;
    const double u = (static_cast<double>(x) + 0.5) / patch;
    const double v = (static_cast<double>(y) + 0.5) / patch;
    const double s =
        std::sin(2 * 3.141592653589793 * def.frequency * (u * std::cos(theta) + v * std::sin(theta)) +
                 tp.phase);
    return 0.5 + 0.5 * s;
  }
  if (def.kind == "dots") {
    const double px = x + tp.jitter_x;
    const double py = y + tp.jitter_y;
    const double gx = px / def.spacing;
    const double gy = py / def.spacing;
    const double dx = (gx - std::floor(gx) - 0.5) * def.spacing;
    const double dy = (gy - std::floor(gy) - 0.5) * def.spacing;
    const double dist = std::sqrt(dx * dx + dy * dy);
    // Soft 1.5 px edge.
    const double t = std::clamp((def.radius + 0.75 - dist) / 1.5, 0.0, 1.0);
    return t * t * (3 - 2 * t);
  }
  // checker
  const double bx = std::floor((x + tp.jitter_x) / def.block);
  const double by = std::floor((y + tp.jitter_y) / def.block);
  return std::fmod(std::fmod(bx + by, 2.0) + 2.0, 2.0) < 1.0 ? 0.0 : 1.0;
}

inline ImageRGB render(const DomainSpec& spec, const std::vector<std::size_t>& class_ids,
                       std::uint64_t key) {
  Prng rng(key);
  double fg[3], bg[3];
  draw_color(rng, spec.palette.fg, fg);
  draw_color(rng, spec.palette.bg, bg);

  std::vector<TextureParams> tps(class_ids.size());
  for (auto& tp : tps) {
    tp.phase = rng.next_range(0, 2 * 3.141592653589793);
    tp.jitter_x = rng.next_range(0, 16.0);
    tp.jitter_y = rng.next_range(0, 16.0);
    tp.orient_jit = rng.next_range(-5.0, 5.0);
  }

  ImageRGB img(spec.patch_size, spec.patch_size, 1.0);
  for (std::uint32_t y = 0; y < spec.patch_size; ++y) {
    for (std::uint32_t x = 0; x < spec.patch_size; ++x) {
      double m = 0.0;
      for (std::size_t i = 0; i < class_ids.size(); ++i) {
        m = std::max(m, field_at(spec.classes[class_ids[i]], tps[i], spec.patch_size, x, y));
      }
      std::uint8_t* px = img.px(x, y);
      for (int c = 0; c < 3; ++c) {
        const double base = bg[c] + (fg[c] - bg[c]) * m;
        const double noisy = base + rng.next_range(-spec.noise_level, spec.noise_level);
        px[c] = static_cast<std::uint8_t>(std::clamp(noisy, 0.0, 1.0) * 255.0 + 0.5);
      }
    }
  }
  return img;
}

}  // namespace detail

/// Writes the domain to disk (one PNG directory per split plus a
/// manifest.json) and returns the manifest. Byte-identical output for
/// identical (spec, seed).
inline DatasetManifest gen_domain(const DomainSpec& spec, std::uint64_t seed,
                                  const std::string& out_dir) {
  namespace fs = std::filesystem;
  spec.validate();

  DatasetManifest manifest;
  manifest.name = spec.name;
  manifest.pixel_resolution_um = 1.0;
  manifest.label_mode = spec.label_mode;
  for (const auto& c : spec.classes) manifest.classes.push_back(c.name);

  const std::vector<std::pair<std::string, std::uint32_t>> splits = {
      {"train", spec.per_class.train}, {"val", spec.per_class.val}, {"test", spec.per_class.test}};

  for (const auto& [split, count] : splits) {
    for (std::size_t k = 0; k < spec.classes.size(); ++k) {
      for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint64_t key = derive_key(seed, spec.name, split, k, i);
        std::vector<std::size_t> ids = {k};
        std::vector<std::string> labels = {spec.classes[k].name};
        if (spec.label_mode == LabelMode::kMulti && spec.classes.size() > 1) {
          // Half the images carry a second texture.
          Prng pick(derive_key(key, "extra"));
          if (pick.next_below(2) == 1) {
            const std::size_t other =
                (k + 1 + pick.next_below(spec.classes.size() - 1)) % spec.classes.size();
            ids.push_back(other);
            labels.push_back(spec.classes[other].name);
          }
        }
        ImageRGB img = detail::render(spec, ids, key);
        const std::string rel = split + "/" + spec.classes[k].name + "_" + std::to_string(i) +
                                ".png";
        write_png(img, (fs::path(out_dir) / rel).string());
        manifest.images.push_back({rel, labels, split, std::nullopt});
      }
    }
  }
  write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  return manifest;
}

inline nlohmann::json domain_to_json(const DomainSpec& d) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : d.classes) {
    classes.push_back({{"name", c.name},
                       {"kind", c.kind},
                       {"orientation_deg", c.orientation_deg},
                       {"frequency", c.frequency},
                       {"spacing", c.spacing},
                       {"radius", c.radius},
                       {"block", c.block}});
  }
  auto range = [](const PaletteRange& r) {
    return nlohmann::json{{"hue", {r.hue_lo, r.hue_hi}},
                          {"sat", {r.sat_lo, r.sat_hi}},
                          {"val", {r.val_lo, r.val_hi}}};
  };
  return nlohmann::json{{"name", d.name},
                        {"patch_size", d.patch_size},
                        {"classes", classes},
                        {"palette", {{"fg", range(d.palette.fg)}, {"bg", range(d.palette.bg)}}},
                        {"noise_level", d.noise_level},
                        {"per_class",
                         {{"train", d.per_class.train},
                          {"val", d.per_class.val},
                          {"test", d.per_class.test}}},
                        {"label_mode", to_string(d.label_mode)}};
}

inline DomainSpec domain_from_json(const nlohmann::json& j) {
  DomainSpec d;
  try {
    d.name = j.at("name").get<std::string>();
    if (j.contains("patch_size")) d.patch_size = j.at("patch_size").get<std::uint32_t>();
    for (const auto& jc : j.at("classes")) {
      ClassDef c;
      c.name = jc.at("name").get<std::string>();
      c.kind = jc.value("kind", std::string("stripes"));
      c.orientation_deg = jc.value("orientation_deg", 0.0);
      c.frequency = jc.value("frequency", 4.0);
      c.spacing = jc.value("spacing", 12.0);
      c.radius = jc.value("radius", 3.5);
      c.block = jc.value("block", 8.0);
      d.classes.push_back(std::move(c));
    }
    auto range = [](const nlohmann::json& jr, PaletteRange& r) {
      if (jr.contains("hue")) {
        r.hue_lo = jr["hue"][0];
        r.hue_hi = jr["hue"][1];
      }
      if (jr.contains("sat")) {
        r.sat_lo = jr["sat"][0];
        r.sat_hi = jr["sat"][1];
      }
      if (jr.contains("val")) {
        r.val_lo = jr["val"][0];
        r.val_hi = jr["val"][1];
      }
    };
    if (j.contains("palette")) {
      if (j["palette"].contains("fg")) range(j["palette"]["fg"], d.palette.fg);
      if (j["palette"].contains("bg")) range(j["palette"]["bg"], d.palette.bg);
    }
    d.noise_level = j.value("noise_level", 0.04);
    if (j.contains("per_class")) {
      d.per_class.train = j["per_class"].value("train", 100u);
      d.per_class.val = j["per_class"].value("val", 20u);
      d.per_class.test = j["per_class"].value("test", 20u);
    }
    d.label_mode = label_mode_from_string(j.value("label_mode", std::string("single-label")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("domain spec: ") + e.what());
  }
  d.validate();
  return d;
}

}  // namespace histokt::xfer
