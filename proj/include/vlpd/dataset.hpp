#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vlpd/array.hpp"
#include "vlpd/box.hpp"

namespace vlpd {

// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, 0) {}
  std::uint8_t* pixel(std::size_t y, std::size_t x) { return rgb.data() + (y * width + x) * 3; }
  const std::uint8_t* pixel(std::size_t y, std::size_t x) const { return rgb.data() + (y * width + x) * 3; }
};

RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);

// [3, H, W] with (pixel / 255 - mean[c]) / std[c].
template <typename T>
Array<T> standardize(const RgbImage& img, const std::array<double, 3>& mean, const std::array<double, 3>& std_dev);

// Reflect-pads to the next multiple of `divisor` on the bottom/right edges.
RgbImage reflect_pad(const RgbImage& img, std::size_t divisor);

struct DatasetRecord {
  std::string image_id;
  std::filesystem::path image_path;
  std::vector<BoundingBox> boxes;  // full-body boxes with visible_ratio
  std::optional<std::filesystem::path> pseudo_label_path;
};

// On disk: <root>/images/<id>.ppm and <root>/annotations.txt with lines
// "image_id x y w h visible_ratio".
struct Dataset {
  std::filesystem::path root;
  std::vector<DatasetRecord> records;
};

Dataset load_dataset(const std::filesystem::path& root);

// Attaches <cache_dir>/<id>.vls to every record; throws IoError if missing.
void attach_pseudo_labels(Dataset& ds, const std::filesystem::path& cache_dir);

enum class ShapeKind { kRectangle, kEllipse };
enum class ObjectRole { kPedestrian, kDistractor, kOccluder };

struct SceneObject {
  ObjectRole role = ObjectRole::kPedestrian;
  ShapeKind shape = ShapeKind::kRectangle;
  int x = 0, y = 0, w = 1, h = 1;
  std::array<std::uint8_t, 3> color{0, 0, 0};
};

struct SceneSpec {
  std::size_t height = 96;
  std::size_t width = 128;
  std::uint64_t texture_seed = 0;
  std::vector<SceneObject> objects;  // painted in order
};

struct RenderedScene {
  RgbImage image;
  // One per pedestrian, in object order; visible_ratio = fraction of the
  // pedestrian's pixels not painted over by later objects.
  std::vector<BoundingBox> boxes;
};

RenderedScene render_scene(const SceneSpec& spec);

// Random scene: textured background, 1-3 upright pedestrians (aspect ~0.41,
// heights 52-88 px), distractor shapes and occluding bars.
SceneSpec random_scene(std::uint64_t seed, std::size_t height, std::size_t width);

// Writes `n` scenes to `out`. Throws InvalidArgument for n == 0 or dims not
// divisible by 32.
Dataset make_synthetic_dataset(std::uint64_t seed, std::size_t n, std::size_t height, std::size_t width,
                               const std::filesystem::path& out);

}  // namespace vlpd
