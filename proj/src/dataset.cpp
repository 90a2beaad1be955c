#include "awb/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "awb/errors.hpp"
#include "awb/parallel.hpp"
#include "awb/rng.hpp"

namespace awb {

namespace fs = std::filesystem;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "query") return Split::query;
  if (text == "gallery") return Split::gallery;
  throw std::invalid_argument("unknown split '" + text + "' (expected train, query or gallery)");
}

void SyntheticDomainSpec::validate() const {
  if (name.empty() || name.find_first_of(" \t\n/") != std::string::npos) {
    throw std::invalid_argument("domain name '" + name + "' must be non-empty without whitespace or '/'");
  }
  if (n_identities < 2) throw std::invalid_argument("domain " + name + ": need at least 2 identities");
  if (views_per_identity < 1) throw std::invalid_argument("domain " + name + ": need at least 1 view");
  if (height < 8 || width < 8) throw std::invalid_argument("domain " + name + ": image too small");
  if (!(query_fraction >= 0.0) || !(gallery_fraction >= 0.0) || query_fraction + gallery_fraction > 1.0) {
    throw std::invalid_argument("domain " + name + ": split fractions must be nonnegative and sum to at most 1");
  }
  if (!(transform.contrast > 0.0)) throw std::invalid_argument("domain " + name + ": contrast must be positive");
}

std::vector<std::size_t> Dataset::select(const std::string& domain, Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].domain == domain && images[i].split == split) out.push_back(i);
  }
  return out;
}

namespace {

using Rgb = std::array<double, 3>;

Rgb random_color(RngStream& r) { return {r.uniform(), r.uniform(), r.uniform()}; }

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

// What stays fixed for one person across views.
struct Person {
  Rgb skin, hair, top, top_alt, bottom, shoes, bag, hat;
  int top_pattern;  // 0 solid, 1 horizontal stripes, 2 vertical stripes, 3 checks
  double stripe_period;
  bool long_sleeves, shorts, has_hat;
  int bag_side;  // 0 none, 1 left, 2 right
  double body_width;
};

Person draw_person(RngStream r) {
  Person p;
  static const Rgb skins[] = {{0.95, 0.80, 0.69}, {0.87, 0.67, 0.52}, {0.70, 0.50, 0.36}, {0.45, 0.31, 0.22}};
  p.skin = skins[r.uniform_int(4)];
  p.hair = mix({0.05, 0.04, 0.03}, {0.75, 0.6, 0.3}, r.uniform());
  p.top = random_color(r);
  p.top_alt = random_color(r);
  p.bottom = random_color(r);
  p.shoes = mix({0.05, 0.05, 0.05}, {0.9, 0.9, 0.9}, r.uniform());
  p.bag = random_color(r);
  p.hat = random_color(r);
  p.top_pattern = static_cast<int>(r.uniform_int(4));
  p.stripe_period = 0.05 + 0.06 * r.uniform();
  p.long_sleeves = r.uniform() < 0.5;
  p.shorts = r.uniform() < 0.3;
  p.has_hat = r.uniform() < 0.3;
  p.bag_side = static_cast<int>(r.uniform_int(3));
  p.body_width = 0.85 + 0.3 * r.uniform();
  return p;
}

// Per-view pose and framing.
struct View {
  double dx, dy, scale, brightness, leg_spread;
  bool flip;
  double phase_u, phase_v;
};

View draw_view(RngStream r) {
  View v;
  v.dx = (r.uniform() - 0.5) * 0.16;
  v.dy = (r.uniform() - 0.5) * 0.08;
  v.scale = 0.9 + 0.2 * r.uniform();
  v.brightness = 0.85 + 0.3 * r.uniform();
  v.leg_spread = 0.06 * r.uniform();
  v.flip = r.uniform() < 0.5;
  v.phase_u = 2.0 * std::numbers::pi * r.uniform();
  v.phase_v = 2.0 * std::numbers::pi * r.uniform();
  return v;
}

// Background family of a domain.
struct Backdrop {
  Rgb a, b;
  double fu, fv;
};

Backdrop draw_backdrop(std::uint64_t seed) {
  RngStream r(seed, 0x6b64);
  Backdrop d;
  d.a = mix({0.2, 0.2, 0.2}, random_color(r), 0.6);
  d.b = mix({0.7, 0.7, 0.7}, random_color(r), 0.6);
  d.fu = 4.0 + 10.0 * r.uniform();
  d.fv = 3.0 + 8.0 * r.uniform();
  return d;
}

bool inside(double u, double v, double u0, double u1, double v0, double v1) {
  return u >= u0 && u < u1 && v >= v0 && v < v1;
}

// Colour of the figure at normalized figure coordinates, or false if empty.
bool figure(const Person& p, const View& view, double u, double v, Rgb& out) {
  const double half = 0.2 * p.body_width;
  const double hu = (u - 0.5) / 0.14, hv = (v - 0.13) / 0.075;
  if (p.has_hat && inside(u, v, 0.33, 0.67, 0.035, 0.085)) {
    out = p.hat;
    return true;
  }
  if (hu * hu + hv * hv <= 1.0) {
    out = v < 0.11 ? p.hair : p.skin;
    return true;
  }
  if (inside(u, v, 0.45, 0.55, 0.2, 0.23)) {
    out = p.skin;
    return true;
  }
  const double top0 = 0.22, top1 = 0.53;
  if (inside(u, v, 0.5 - half, 0.5 + half, top0, top1)) {
    bool alt = false;
    const double su = (u - 0.5 + half) / p.stripe_period, sv = (v - top0) / p.stripe_period;
    switch (p.top_pattern) {
      case 1: alt = static_cast<int>(std::floor(sv)) % 2 == 1; break;
      case 2: alt = static_cast<int>(std::floor(su)) % 2 == 1; break;
      case 3: alt = (static_cast<int>(std::floor(su)) + static_cast<int>(std::floor(sv))) % 2 == 1; break;
      default: break;
    }
    out = alt ? p.top_alt : p.top;
    return true;
  }
  const double arm = 0.075;
  for (double side : {-1.0, 1.0}) {
    const double a0 = side < 0 ? 0.5 - half - arm : 0.5 + half;
    if (inside(u, v, a0, a0 + arm, top0 + 0.01, top1 - 0.02)) {
      out = (p.long_sleeves || v < top0 + 0.1) ? p.top : p.skin;
      return true;
    }
  }
  if (p.bag_side != 0) {
    const double b0 = p.bag_side == 1 ? 0.5 - half - arm - 0.14 : 0.5 + half + arm;
    if (inside(u, v, b0, b0 + 0.14, 0.33, 0.55)) {
      out = p.bag;
      return true;
    }
  }
  const double leg0 = top1, leg1 = 0.92, shoe1 = 0.97;
  for (double side : {-1.0, 1.0}) {
    const double inner = 0.015 + view.leg_spread * (v - leg0) / (shoe1 - leg0);
    const double l0 = side < 0 ? 0.5 - half * 0.8 - inner : 0.5 + inner;
    const double l1 = side < 0 ? 0.5 - inner : 0.5 + half * 0.8 + inner;
    if (inside(u, v, l0, l1, leg0, leg1)) {
      out = (p.shorts && v > 0.7) ? p.skin : p.bottom;
      return true;
    }
    if (inside(u, v, l0, l1, leg1, shoe1)) {
      out = p.shoes;
      return true;
    }
  }
  return false;
}

std::vector<std::uint8_t> render(const Person& person, const View& view, const Backdrop& back,
                                 const DomainTransform& tf, std::size_t h, std::size_t w, RngStream noise) {
  std::vector<double> img(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
      double fu = (u - 0.5 - view.dx) / view.scale + 0.5;
      const double fv = (v - 0.5 - view.dy) / view.scale + 0.5;
      if (view.flip) fu = 1.0 - fu;
      Rgb c;
      if (!figure(person, view, fu, fv, c)) {
        const double t = 0.5 + 0.5 * std::sin(back.fu * u * 2.0 + view.phase_u) * std::cos(back.fv * v * 2.0 + view.phase_v);
        c = mix(back.a, back.b, t);
      } else {
        for (auto& ch : c) ch *= view.brightness;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double val = c[ch] + 0.025 * noise.normal();
        val = tf.contrast * (val - 0.5) + 0.5 + tf.color_shift[ch];
        img[(ch * h + y) * w + x] = val;
      }
    }
  }
  if (tf.blur_radius > 0) {
    const long r = static_cast<long>(tf.blur_radius);
    std::vector<double> tmp(img.size());
    // Separable box blur with clamped borders.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (long y = 0; y < static_cast<long>(h); ++y) {
          for (long x = 0; x < static_cast<long>(w); ++x) {
            double s = 0.0;
            for (long k = -r; k <= r; ++k) {
              const long yy = pass == 0 ? y : std::clamp(y + k, 0L, static_cast<long>(h) - 1);
              const long xx = pass == 0 ? std::clamp(x + k, 0L, static_cast<long>(w) - 1) : x;
              s += img[(ch * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)];
            }
            tmp[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] = s / static_cast<double>(2 * r + 1);
          }
        }
      }
      img.swap(tmp);
    }
  }
  std::vector<std::uint8_t> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

std::string image_path(const std::string& domain, std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.rgb", id);
  return "images/" + domain + "/" + buf;
}

}  // namespace

Dataset generate_dataset(const std::vector<SyntheticDomainSpec>& domains, std::uint64_t seed) {
  Dataset data;
  if (domains.empty()) throw std::invalid_argument("generate_dataset: no domains");
  data.height = domains.front().height;
  data.width = domains.front().width;
  for (const auto& spec : domains) {
    spec.validate();
    if (spec.height != data.height || spec.width != data.width) {
      throw std::invalid_argument("generate_dataset: all domains must share one image size");
    }
    const Backdrop back = draw_backdrop(spec.transform.background_seed);
    const std::size_t v = spec.views_per_identity;
    const auto n_query = static_cast<std::size_t>(std::lround(spec.query_fraction * static_cast<double>(v)));
    const auto n_gallery = static_cast<std::size_t>(std::lround(spec.gallery_fraction * static_cast<double>(v)));
    if (n_query + n_gallery > v) throw std::invalid_argument("domain " + spec.name + ": split shares exceed views");
    const std::size_t n_train = v - n_query - n_gallery;
    const std::size_t base = data.images.size();
    data.images.resize(base + spec.n_identities * v);
    const RngStream people(seed, spec.identity_stream);
    parallel_for(spec.n_identities, [&](std::size_t id) {
      const RngStream pr = people.split(id);
      const Person person = draw_person(pr.split(0));
      for (std::size_t k = 0; k < v; ++k) {
        const RngStream vr = pr.split(1 + k);
        ImageRecord& rec = data.images[base + id * v + k];
        rec.image_id = base + id * v + k;
        rec.identity = id;
        rec.domain = spec.name;
        rec.split = k < n_train ? Split::train : (k < n_train + n_query ? Split::query : Split::gallery);
        rec.path = image_path(spec.name, rec.image_id);
        rec.pixels = render(person, draw_view(vr.split(0)), back, spec.transform, spec.height, spec.width, vr.split(1));
      }
    });
  }
  return data;
}

void write_dataset(const Dataset& data, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  {
    std::ofstream info(fs::path(dir) / "dataset.info");
    info << "height = " << data.height << "\nwidth = " << data.width << "\n";
    if (!info) throw IoError("cannot write dataset.info in " + dir);
  }
  std::ofstream manifest(fs::path(dir) / "manifest.tsv");
  if (!manifest) throw IoError("cannot write manifest.tsv in " + dir);
  for (const auto& rec : data.images) {
    manifest << rec.image_id << '\t' << rec.identity << '\t' << rec.domain << '\t' << to_string(rec.split) << '\t'
             << rec.path << '\n';
    const fs::path file = fs::path(dir) / rec.path;
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw IoError("cannot create " + file.parent_path().string() + ": " + ec.message());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(rec.pixels.data()), static_cast<std::streamsize>(rec.pixels.size()));
    if (!out) throw IoError("cannot write " + file.string());
  }
  if (!manifest) throw IoError("write failed for manifest.tsv in " + dir);
}

Dataset read_dataset(const std::string& dir) {
  Dataset data;
  std::ifstream info(fs::path(dir) / "dataset.info");
  if (!info) throw IoError("cannot open dataset.info in " + dir);
  std::map<std::string, std::size_t> dims;
  for (std::string line; std::getline(info, line);) {
    std::istringstream ls(line);
    std::string key, eq;
    std::size_t value = 0;
    if (ls >> key >> eq >> value && eq == "=") dims[key] = value;
  }
  if (!dims.count("height") || !dims.count("width")) throw DataError("dataset.info lacks height or width");
  data.height = dims["height"];
  data.width = dims["width"];
  const std::size_t bytes = 3 * data.height * data.width;

  std::ifstream manifest(fs::path(dir) / "manifest.tsv");
  if (!manifest) throw IoError("cannot open manifest.tsv in " + dir);
  std::size_t line_no = 0;
  for (std::string line; std::getline(manifest, line);) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, '\t');) f.push_back(cell);
    if (f.size() != 5) throw DataError("manifest line " + std::to_string(line_no) + ": expected 5 tab-separated fields");
    ImageRecord rec;
    try {
      rec.image_id = std::stoull(f[0]);
      rec.identity = std::stoull(f[1]);
      rec.split = parse_split(f[3]);
    } catch (const std::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    rec.domain = f[2];
    rec.path = f[4];
    std::ifstream img(fs::path(dir) / rec.path, std::ios::binary);
    if (!img) throw IoError("cannot open image " + rec.path);
    rec.pixels.assign(std::istreambuf_iterator<char>(img), std::istreambuf_iterator<char>());
    if (rec.pixels.size() != bytes) {
      throw DataError("image " + rec.path + " holds " + std::to_string(rec.pixels.size()) + " bytes, expected " +
                      std::to_string(bytes));
    }
    data.images.push_back(std::move(rec));
  }
  if (data.images.empty()) throw DataError("manifest in " + dir + " lists no images");
  return data;
}

TensorF image_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  const std::size_t plane = 3 * data.height * data.width;
  std::vector<float> values(indices.size() * plane);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& px = data.images.at(indices[i]).pixels;
    for (std::size_t j = 0; j < plane; ++j) values[i * plane + j] = (static_cast<float>(px[j]) / 255.0f - 0.5f) / 0.25f;
  }
  return TensorF(Shape{indices.size(), 3, data.height, data.width}, std::move(values));
}

}  // namespace awb
