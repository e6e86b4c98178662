#include "vlpd/plot.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>

#include "vlpd/error.hpp"

namespace vlpd {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

// 5x7 glyphs, one byte per row, low 5 bits used (MSB = leftmost).
const std::map<char, std::array<std::uint8_t, 7>>& glyphs() {
  static const std::map<char, std::array<std::uint8_t, 7>> g = {
      {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},     {'2', {14, 17, 1, 2, 4, 8, 31}},
      {'3', {31, 2, 4, 2, 1, 17, 14}},     {'4', {2, 6, 10, 18, 31, 2, 2}},    {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},      {'8', {14, 17, 17, 14, 17, 17, 14}},
      {'9', {14, 17, 17, 15, 1, 2, 12}},   {'.', {0, 0, 0, 0, 0, 12, 12}},     {'+', {0, 4, 4, 31, 4, 4, 0}},
      {'-', {0, 0, 0, 31, 0, 0, 0}},       {'=', {0, 0, 31, 0, 31, 0, 0}},     {':', {0, 12, 12, 0, 12, 12, 0}},
      {' ', {0, 0, 0, 0, 0, 0, 0}},        {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}},
      {'C', {14, 17, 16, 16, 16, 17, 14}}, {'D', {28, 18, 17, 17, 17, 18, 28}}, {'E', {31, 16, 16, 30, 16, 16, 31}},
      {'F', {31, 16, 16, 30, 16, 16, 16}}, {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}},
      {'I', {14, 4, 4, 4, 4, 4, 14}},      {'J', {7, 2, 2, 2, 2, 18, 12}},     {'K', {17, 18, 20, 24, 20, 18, 17}},
      {'L', {16, 16, 16, 16, 16, 16, 31}}, {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}},
      {'O', {14, 17, 17, 17, 17, 17, 14}}, {'P', {30, 17, 17, 30, 16, 16, 16}}, {'Q', {14, 17, 17, 17, 21, 18, 13}},
      {'R', {30, 17, 17, 30, 20, 18, 17}}, {'S', {15, 16, 16, 14, 1, 1, 30}},   {'T', {31, 4, 4, 4, 4, 4, 4}},
      {'U', {17, 17, 17, 17, 17, 17, 14}}, {'V', {17, 17, 17, 17, 17, 10, 4}},  {'W', {17, 17, 17, 21, 21, 21, 10}},
      {'X', {17, 17, 10, 4, 10, 17, 17}},  {'Y', {17, 17, 10, 4, 4, 4, 4}},     {'Z', {31, 1, 2, 4, 8, 16, 31}},
  };
  return g;
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(std::size_t(w) * h * 3, 255) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    std::copy(c.begin(), c.end(), px_.begin() + (std::ptrdiff_t(y) * w_ + x) * 3);
  }

  void line(double x0, double y0, double x1, double y1, Rgb c, int thick = 1) {
    const int n = int(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double t = double(i) / n;
      const int x = int(std::lround(x0 + t * (x1 - x0))), y = int(std::lround(y0 + t * (y1 - y0)));
      for (int dy = 0; dy < thick; ++dy)
        for (int dx = 0; dx < thick; ++dx) set(x + dx - thick / 2, y + dy - thick / 2, c);
    }
  }

  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, c);
  }

  void text(int x, int y, const std::string& s, Rgb c) {
    for (char ch : s) {
      const auto it = glyphs().find(char(std::toupper(static_cast<unsigned char>(ch))));
      if (it != glyphs().end()) {
        for (int r = 0; r < 7; ++r)
          for (int col = 0; col < 5; ++col)
            if (it->second[r] & (16 >> col)) set(x + col, y + r, c);
      }
      x += 6;
    }
  }

  void save(const std::filesystem::path& path) const {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write '" + path.string() + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(fp);
      throw IoError("libpng failed writing '" + path.string() + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(w_), png_uint_32(h_), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h_; ++y) {
      png_write_row(png, const_cast<png_bytep>(px_.data() + std::size_t(y) * w_ * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
  }

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

const Rgb kPalette[] = {{214, 39, 40}, {31, 119, 180}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14}, {23, 190, 207}};

}  // namespace

void plot_miss_rate_curves(const std::vector<SubsetEvaluation>& evals, const std::filesystem::path& out_png, int width,
                           int height) {
  if (width < 200 || height < 150) throw InvalidArgument("plot size too small");
  Canvas cv(width, height);
  const int left = 50, right = width - 20, top = 20, bottom = height - 40;
  // x: FPPI in [1e-3, 1e1], y: miss rate in [1e-2, 1].
  const double lx0 = -3.0, lx1 = 1.0, ly0 = -2.0, ly1 = 0.0;
  auto px = [&](double fppi) {
    const double l = std::clamp(std::log10(std::max(fppi, 1e-300)), lx0, lx1);
    return left + (l - lx0) / (lx1 - lx0) * (right - left);
  };
  auto py = [&](double mr) {
    const double l = std::clamp(std::log10(std::max(mr, 1e-300)), ly0, ly1);
    return bottom - (l - ly0) / (ly1 - ly0) * (bottom - top);
  };

  const Rgb grid{220, 220, 220}, axis{0, 0, 0};
  for (int e = -3; e <= 1; ++e) {
    cv.line(px(std::pow(10.0, e)), top, px(std::pow(10.0, e)), bottom, grid);
    cv.text(int(px(std::pow(10.0, e))) - 9, bottom + 6, "1E" + std::to_string(e), axis);
  }
  for (int e = -2; e <= 0; ++e) {
    cv.line(left, py(std::pow(10.0, e)), right, py(std::pow(10.0, e)), grid);
    cv.text(8, int(py(std::pow(10.0, e))) - 3, "1E" + std::to_string(e), axis);
  }
  cv.line(left, top, left, bottom, axis);
  cv.line(left, bottom, right, bottom, axis);
  cv.text((left + right) / 2 - 12, height - 16, "FPPI", axis);

  for (std::size_t i = 0; i < evals.size(); ++i) {
    const Rgb c = kPalette[i % std::size(kPalette)];
    const auto& curve = evals[i].curve;
    // Step curve: miss rate holds until the next operating point.
    double prev_x = px(1e-3), prev_y = py(1.0);
    for (const auto& p : curve) {
      const double x = px(p.fppi), y = py(p.miss_rate);
      cv.line(prev_x, prev_y, x, prev_y, c, 2);
      cv.line(x, prev_y, x, y, c, 2);
      prev_x = x;
      prev_y = y;
    }
    cv.line(prev_x, prev_y, right, prev_y, c, 2);

    char label[96];
    std::snprintf(label, sizeof label, "%s %.2f", evals[i].subset.c_str(), evals[i].mr2 * 100.0);
    const int ly = top + 6 + int(i) * 12;
    cv.rect(right - 130, ly, right - 120, ly + 7, c);
    cv.text(right - 115, ly, label, axis);
  }
  cv.save(out_png);
}

}  // namespace vlpd
