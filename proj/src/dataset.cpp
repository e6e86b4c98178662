#include "vlpd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vlpd/error.hpp"
#include "vlpd/evaluation.hpp"
#include "vlpd/rng.hpp"

namespace vlpd {

namespace fs = std::filesystem;

RgbImage read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path.string() + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError("image", "'" + path.string() + "' is not a binary PPM (P6)");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    long v = -1;
    in >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw FormatError("image", "'" + path.string() + "' must be an 8-bit P6 with positive size");
  }
  in.get();
  RgbImage img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  in.read(reinterpret_cast<char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (in.gcount() != std::streamsize(img.rgb.size())) throw FormatError("image", "truncated pixel data");
  return img;
}

void write_ppm(const fs::path& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image '" + path.string() + "'");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

template <typename T>
Array<T> standardize(const RgbImage& img, const std::array<double, 3>& mean, const std::array<double, 3>& std_dev) {
  Array<T> out({3, img.height, img.width});
  const std::size_t hw = img.height * img.width;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      out[c * hw + i] = static_cast<T>((img.rgb[i * 3 + c] / 255.0 - mean[c]) / std_dev[c]);
    }
  }
  return out;
}

template Array<float> standardize(const RgbImage&, const std::array<double, 3>&, const std::array<double, 3>&);
template Array<double> standardize(const RgbImage&, const std::array<double, 3>&, const std::array<double, 3>&);

RgbImage reflect_pad(const RgbImage& img, std::size_t divisor) {
  const std::size_t h = (img.height + divisor - 1) / divisor * divisor;
  const std::size_t w = (img.width + divisor - 1) / divisor * divisor;
  if (h == img.height && w == img.width) return img;
  auto reflect = [](std::size_t i, std::size_t n) {
    if (n == 1) return std::size_t{0};
    const std::size_t period = 2 * (n - 1);
    std::size_t m = i % period;
    return m < n ? m : period - m;
  };
  RgbImage out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto* src = img.pixel(reflect(y, img.height), reflect(x, img.width));
      std::copy(src, src + 3, out.pixel(y, x));
    }
  }
  return out;
}

Dataset load_dataset(const fs::path& root) {
  const fs::path images = root / "images";
  if (!fs::is_directory(images)) throw IoError("dataset '" + root.string() + "' has no images/ directory");
  Dataset ds;
  ds.root = root;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("dataset '" + root.string() + "' contains no .ppm images");

  BoxesByImage gts;
  const fs::path ann = root / "annotations.txt";
  if (fs::exists(ann)) gts = read_ground_truth_file(ann.string());
  for (const auto& f : files) {
    DatasetRecord r;
    r.image_id = f.stem().string();
    r.image_path = f;
    if (auto it = gts.find(r.image_id); it != gts.end()) r.boxes = it->second;
    ds.records.push_back(std::move(r));
  }
  for (const auto& [id, _] : gts) {
    const bool known = std::any_of(ds.records.begin(), ds.records.end(), [&](const auto& r) { return r.image_id == id; });
    if (!known) throw AnnotationError("annotation for unknown image '" + id + "'");
  }
  return ds;
}

void attach_pseudo_labels(Dataset& ds, const fs::path& cache_dir) {
  for (auto& r : ds.records) {
    fs::path p = cache_dir / (r.image_id + ".vls");
    if (!fs::exists(p)) throw IoError("missing cached pseudo labels '" + p.string() + "'");
    r.pseudo_label_path = std::move(p);
  }
}

namespace {

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

bool inside(const SceneObject& o, int px, int py) {
  if (px < o.x || py < o.y || px >= o.x + o.w || py >= o.y + o.h) return false;
  if (o.shape == ShapeKind::kRectangle) return true;
  const double rx = 0.5 * o.w, ry = 0.5 * o.h;
  const double dx = (px + 0.5 - o.x - rx) / rx, dy = (py + 0.5 - o.y - ry) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

RenderedScene render_scene(const SceneSpec& spec) {
  RenderedScene out{RgbImage(spec.height, spec.width), {}};
  Rng rng(mix_seed(spec.texture_seed, 0x74657874ULL));
  std::array<double, 3> base{};
  for (auto& b : base) b = rng.uniform(100.0, 170.0);
  const double tilt = rng.uniform(-30.0, 30.0);
  const int horizon = int(spec.height) * 2 / 3 + int(rng.integer(-6, 6));
  for (std::size_t y = 0; y < spec.height; ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      auto* px = out.image.pixel(y, x);
      const double shade = tilt * (double(y) / double(spec.height) - 0.5) + (int(y) > horizon ? -25.0 : 0.0);
      for (std::size_t c = 0; c < 3; ++c) px[c] = clamp_u8(base[c] + shade + rng.uniform(-12.0, 12.0));
    }
  }

  std::vector<int> owner(spec.height * spec.width, -1);
  for (std::size_t k = 0; k < spec.objects.size(); ++k) {
    const auto& o = spec.objects[k];
    for (int y = std::max(0, o.y); y < std::min<int>(int(spec.height), o.y + o.h); ++y) {
      for (int x = std::max(0, o.x); x < std::min<int>(int(spec.width), o.x + o.w); ++x) {
        if (!inside(o, x, y)) continue;
        auto* px = out.image.pixel(std::size_t(y), std::size_t(x));
        std::copy(o.color.begin(), o.color.end(), px);
        owner[std::size_t(y) * spec.width + std::size_t(x)] = int(k);
      }
    }
  }
  for (std::size_t k = 0; k < spec.objects.size(); ++k) {
    const auto& o = spec.objects[k];
    if (o.role != ObjectRole::kPedestrian) continue;
    std::size_t total = 0, visible = 0;
    for (int y = o.y; y < o.y + o.h; ++y) {
      for (int x = o.x; x < o.x + o.w; ++x) {
        if (!inside(o, x, y)) continue;
        ++total;
        const bool in_image = x >= 0 && y >= 0 && x < int(spec.width) && y < int(spec.height);
        if (in_image && owner[std::size_t(y) * spec.width + std::size_t(x)] == int(k)) ++visible;
      }
    }
    BoundingBox b;
    b.x = o.x;
    b.y = o.y;
    b.w = o.w;
    b.h = o.h;
    b.visible_ratio = total ? double(visible) / double(total) : 0.0;
    out.boxes.push_back(b);
  }
  return out;
}

SceneSpec random_scene(std::uint64_t seed, std::size_t height, std::size_t width) {
  Rng rng(mix_seed(seed, 0x7363656e65ULL));
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.texture_seed = rng.next();
  const int H = int(height), W = int(width);

  auto dark = [&]() -> std::array<std::uint8_t, 3> {
    return {clamp_u8(rng.uniform(10, 60)), clamp_u8(rng.uniform(10, 60)), clamp_u8(rng.uniform(10, 60))};
  };
  auto any_color = [&]() -> std::array<std::uint8_t, 3> {
    return {clamp_u8(rng.uniform(0, 255)), clamp_u8(rng.uniform(0, 255)), clamp_u8(rng.uniform(0, 255))};
  };

  // Pedestrians occupy disjoint horizontal bands.
  struct Band {
    int x0, x1;
  };
  std::vector<Band> taken;
  std::vector<SceneObject> peds;
  const int want = int(rng.integer(1, 3));
  for (int attempt = 0; attempt < 50 && int(peds.size()) < want; ++attempt) {
    const int max_h = std::min(88, H - 4);
    const int h = int(rng.integer(std::min(52, max_h), max_h));
    const int w = std::max(1, int(std::lround(0.41 * h)));
    const int x = int(rng.integer(2, W - w - 2));
    const int y = int(rng.integer(2, H - h - 2));
    const bool clash = std::any_of(taken.begin(), taken.end(), [&](const Band& b) { return x < b.x1 + 6 && x + w + 6 > b.x0; });
    if (clash) continue;
    taken.push_back({x, x + w});
    SceneObject p;
    p.role = ObjectRole::kPedestrian;
    p.x = x;
    p.y = y;
    p.w = w;
    p.h = h;
    p.color = rng.uniform() < 0.8 ? dark() : std::array<std::uint8_t, 3>{clamp_u8(rng.uniform(220, 255)),
                                                                          clamp_u8(rng.uniform(220, 255)),
                                                                          clamp_u8(rng.uniform(220, 255))};
    peds.push_back(p);
  }

  // Distractors sit behind pedestrians: blobs, wide "vehicles", thin poles.
  const int n_distract = int(rng.integer(1, 3));
  for (int i = 0; i < n_distract; ++i) {
    SceneObject d;
    d.role = ObjectRole::kDistractor;
    const double kind = rng.uniform();
    if (kind < 0.35) {
      d.shape = ShapeKind::kEllipse;
      d.w = int(rng.integer(10, 30));
      d.h = int(rng.integer(10, 30));
    } else if (kind < 0.7) {
      d.w = int(rng.integer(30, 56));
      d.h = int(rng.integer(14, 26));
    } else {
      d.w = int(rng.integer(3, 5));
      d.h = int(rng.integer(40, std::min(80, H - 4)));
    }
    d.x = int(rng.integer(0, std::max(0, W - d.w)));
    d.y = int(rng.integer(0, std::max(0, H - d.h)));
    d.color = rng.uniform() < 0.5 ? dark() : any_color();
    spec.objects.push_back(d);
  }
  for (const auto& p : peds) spec.objects.push_back(p);

  // Occluding bars over the lower part of some pedestrians.
  for (const auto& p : peds) {
    if (rng.uniform() >= 0.35) continue;
    SceneObject o;
    o.role = ObjectRole::kOccluder;
    const double frac = rng.uniform(0.25, 0.7);
    o.h = std::max(1, int(std::lround(frac * p.h)));
    o.w = p.w + int(rng.integer(4, 16));
    o.x = std::clamp(p.x - int(rng.integer(0, o.w - p.w)), 0, W - o.w);
    o.y = p.y + p.h - o.h;
    o.color = any_color();
    spec.objects.push_back(o);
  }
  return spec;
}

Dataset make_synthetic_dataset(std::uint64_t seed, std::size_t n, std::size_t height, std::size_t width,
                               const fs::path& out) {
  if (n == 0) throw InvalidArgument("synthetic dataset needs at least one image");
  if (height % 32 != 0 || width % 32 != 0) {
    throw InvalidArgument("synthetic image dims must be divisible by 32");
  }
  if (height < 64) throw InvalidArgument("synthetic images must be at least 64 px tall");
  fs::create_directories(out / "images");
  Dataset ds;
  ds.root = out;
  BoxesByImage gts;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", i);
    const RenderedScene scene = render_scene(random_scene(mix_seed(seed, i), height, width));
    DatasetRecord r;
    r.image_id = id;
    r.image_path = out / "images" / (std::string(id) + ".ppm");
    r.boxes = scene.boxes;
    write_ppm(r.image_path, scene.image);
    gts[id] = scene.boxes;
    ds.records.push_back(std::move(r));
  }
  write_ground_truth_file((out / "annotations.txt").string(), gts);
  return ds;
}

}  // namespace vlpd
