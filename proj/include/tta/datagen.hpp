#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tta/errors.hpp"
#include "tta/tensor.hpp"
#include "tta/util.hpp"
#include "tta/version.hpp"

namespace tta {

inline constexpr std::size_t kImageSide = 16;

/// Grayscale image with pixels in [0,1] and a class label.
struct LabeledImage {
  Tensor pixels;  // (height, width)
  int label = 0;
};

struct Dataset {
  std::vector<LabeledImage> items;
  std::size_t height = kImageSide;
  std::size_t width = kImageSide;
  int num_classes = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return items.size(); }
};

struct DatasetSplits {
  Dataset train, val, test;
};

// ---------------------------------------------------------------------------
// Shape dataset: class identity is the global shape (bar, cross, ring,
// triangle), so rearranging patches destroys the class cue. An optional
// class-correlated texture in the top-left 4x4 corner plants the biased
// scenario where confidence can come from a local cue instead of the shape.
// ---------------------------------------------------------------------------

namespace shapes {

inline constexpr std::size_t kNumTemplates = 4;
inline constexpr std::size_t kCuePatch = 4;  // corner patch side

// Shapes never paint into the corner cue patch, so with spurious_strength 0
// the corner carries pure background noise independent of the label.
inline void put(std::vector<double>& img, int r, int c, double v) {
  const int n = static_cast<int>(kImageSide);
  if (r < 0 || c < 0 || r >= n || c >= n) return;
  if (r < static_cast<int>(kCuePatch) && c < static_cast<int>(kCuePatch)) return;
  img[static_cast<std::size_t>(r) * kImageSide + static_cast<std::size_t>(c)] = v;
}

inline void draw_segment(std::vector<double>& img, double r0, double c0,
                         double r1, double c1, double v) {
  const int steps = 48;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const double r = r0 + t * (r1 - r0);
    const double c = c0 + t * (c1 - c0);
    put(img, static_cast<int>(std::lround(r)), static_cast<int>(std::lround(c)), v);
  }
}

inline void draw_bar(std::vector<double>& img, Rng& rng, double fg) {
  const bool horizontal = (rng() % 2) == 0;
  const int thickness = 1 + static_cast<int>(rng() % 2);
  const int length = 10 + static_cast<int>(rng() % 5);
  const int offset = 2 + static_cast<int>(rng() % (13 - thickness));
  const int start = static_cast<int>(rng() % (kImageSide - length + 1));
  for (int t = 0; t < thickness; ++t)
    for (int k = 0; k < length; ++k) {
      if (horizontal)
        put(img, offset + t, start + k, fg);
      else
        put(img, start + k, offset + t, fg);
    }
}

inline void draw_cross(std::vector<double>& img, Rng& rng, double fg) {
  const int cy = 5 + static_cast<int>(rng() % 6);
  const int cx = 5 + static_cast<int>(rng() % 6);
  const int arm = 4 + static_cast<int>(rng() % 3);
  const int thickness = 1 + static_cast<int>(rng() % 2);
  for (int t = 0; t < thickness; ++t) {
    for (int k = -arm; k <= arm; ++k) {
      put(img, cy + t, cx + k, fg);
      put(img, cy + k, cx + t, fg);
    }
  }
}

inline void draw_ring(std::vector<double>& img, Rng& rng, double fg) {
  const double cy = 6.0 + static_cast<double>(rng() % 4);
  const double cx = 6.0 + static_cast<double>(rng() % 4);
  const double radius = 3.0 + 0.5 * static_cast<double>(rng() % 5);
  const double band = 0.7 + 0.1 * static_cast<double>(rng() % 4);
  for (std::size_t r = 0; r < kImageSide; ++r)
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const double d = std::hypot(static_cast<double>(r) + 0.5 - cy,
                                  static_cast<double>(c) + 0.5 - cx);
      if (std::abs(d - radius) <= band)
        put(img, static_cast<int>(r), static_cast<int>(c), fg);
    }
}

inline void draw_triangle(std::vector<double>& img, Rng& rng, double fg) {
  const double cy = 7.0 + static_cast<double>(rng() % 3);
  const double cx = 6.0 + static_cast<double>(rng() % 4);
  const double size = 4.0 + static_cast<double>(rng() % 3);
  auto jit = [&rng] { return 0.5 * static_cast<double>(rng() % 3) - 0.5; };
  const double top_r = cy - size + jit(), top_c = cx + jit();
  const double bl_r = cy + 0.8 * size + jit(), bl_c = cx - size + jit();
  const double br_r = cy + 0.8 * size + jit(), br_c = cx + size + jit();
  draw_segment(img, top_r, top_c, bl_r, bl_c, fg);
  draw_segment(img, top_r, top_c, br_r, br_c, fg);
  draw_segment(img, bl_r, bl_c, br_r, br_c, fg);
}

inline void apply_corner_cue(std::vector<double>& img, int label) {
  for (std::size_t r = 0; r < kCuePatch; ++r)
    for (std::size_t c = 0; c < kCuePatch; ++c) {
      double v = 0.0;
      switch (label) {
        case 0: v = 0.95; break;
        case 1: v = 0.02; break;
        case 2: v = (c % 2 == 0) ? 0.95 : 0.02; break;
        default: v = ((r + c) % 2 == 0) ? 0.95 : 0.02; break;
      }
      img[r * kImageSide + c] = v;
    }
}

inline LabeledImage make_image(int label, Rng& rng, double spurious_strength) {
  std::vector<double> img(kImageSide * kImageSide);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double base = 0.05 + 0.15 * std::uniform_real_distribution<double>(0, 1)(rng);
  for (double& px : img) px = base + noise(rng);
  const double fg =
      0.75 + 0.2 * std::uniform_real_distribution<double>(0, 1)(rng);
  switch (label) {
    case 0: draw_bar(img, rng, fg); break;
    case 1: draw_cross(img, rng, fg); break;
    case 2: draw_ring(img, rng, fg); break;
    default: draw_triangle(img, rng, fg); break;
  }
  if (std::uniform_real_distribution<double>(0, 1)(rng) < spurious_strength)
    apply_corner_cue(img, label);
  for (double& px : img) px = std::clamp(px, 0.0, 1.0);
  return LabeledImage{Tensor::from_data({kImageSide, kImageSide}, std::move(img)),
                      label};
}

}  // namespace shapes

/// Generates class-balanced train/val/test splits (50/10/40 per class).
/// Fully reproducible from the seed; spurious_strength in [0,1] is the
/// probability that an image carries the class-correlated corner texture.
inline DatasetSplits generate_shape_dataset(std::size_t n_per_class, int num_classes,
                                            std::uint64_t seed,
                                            double spurious_strength) {
  if (num_classes < 2 ||
      static_cast<std::size_t>(num_classes) > shapes::kNumTemplates)
    throw ParameterError("generate_shape_dataset: num_classes must be in [2," +
                         std::to_string(shapes::kNumTemplates) + "]");
  if (spurious_strength < 0.0 || spurious_strength > 1.0)
    throw ParameterError("generate_shape_dataset: spurious_strength must be in [0,1]");
  if (n_per_class == 0)
    throw ParameterError("generate_shape_dataset: n_per_class must be positive");

  DatasetSplits out;
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    d->num_classes = num_classes;
    d->seed = seed;
  }
  const std::size_t n_train = n_per_class / 2;
  const std::size_t n_val = n_per_class / 10;

  for (int c = 0; c < num_classes; ++c) {
    Rng rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    for (std::size_t i = 0; i < n_per_class; ++i) {
      LabeledImage img = shapes::make_image(c, rng, spurious_strength);
      if (i < n_train)
        out.train.items.push_back(std::move(img));
      else if (i < n_train + n_val)
        out.val.items.push_back(std::move(img));
      else
        out.test.items.push_back(std::move(img));
    }
  }
  Rng shuffle_rng = make_rng(mix_seed(seed, 0x5B17ULL));
  shuffle_vector(out.train.items, shuffle_rng);
  shuffle_vector(out.val.items, shuffle_rng);
  shuffle_vector(out.test.items, shuffle_rng);
  return out;
}

// ---------------------------------------------------------------------------
// Corruptions. Six kinds, five severities each. Severity ladders were
// calibrated once against the pinned pretrained classifier (severity-5
// Gaussian noise lands no-adapt accuracy in the 55-75% band) and are frozen
// here. Random draws depend on (seed, kind) but never on severity, so for a
// fixed seed the distortion is pathwise non-decreasing in severity.
// ---------------------------------------------------------------------------

enum class CorruptionKind {
  gaussian_noise,
  shot_noise,
  contrast,
  brightness,
  gaussian_blur,
  pixelate,
};

inline const char* to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::shot_noise: return "shot_noise";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::gaussian_blur: return "gaussian_blur";
    case CorruptionKind::pixelate: return "pixelate";
  }
  return "?";
}

inline CorruptionKind corruption_from_string(const std::string& s) {
  if (s == "gaussian_noise") return CorruptionKind::gaussian_noise;
  if (s == "shot_noise") return CorruptionKind::shot_noise;
  if (s == "contrast") return CorruptionKind::contrast;
  if (s == "brightness") return CorruptionKind::brightness;
  if (s == "gaussian_blur") return CorruptionKind::gaussian_blur;
  if (s == "pixelate") return CorruptionKind::pixelate;
  throw ParameterError("unknown corruption kind: " + s);
}

inline const std::array<CorruptionKind, 6>& all_corruption_kinds() {
  static const std::array<CorruptionKind, 6> kinds = {
      CorruptionKind::gaussian_noise, CorruptionKind::shot_noise,
      CorruptionKind::contrast,       CorruptionKind::brightness,
      CorruptionKind::gaussian_blur,  CorruptionKind::pixelate};
  return kinds;
}

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;  // 1..5
  std::uint64_t seed = 0;
};

namespace corruption {

inline constexpr std::array<double, 5> kGaussianSigma = {0.10, 0.18, 0.28, 0.42, 0.65};
inline constexpr std::array<double, 5> kShotRate = {60.0, 25.0, 10.0, 4.0, 1.5};
inline constexpr std::array<double, 5> kContrastFactor = {0.80, 0.66, 0.54, 0.44, 0.36};
inline constexpr std::array<double, 5> kBrightnessDelta = {0.08, 0.16, 0.25, 0.36, 0.50};
inline constexpr std::array<double, 5> kBlurSigma = {0.5, 0.8, 1.1, 1.6, 2.2};
// Pixelate severities walk one nested block chain (2 -> 4 -> 8) with blend
// weights that only grow, so per-image distortion is monotone by projection
// nesting alone.
struct PixelateLevel {
  double blend;
  std::size_t block;
};
inline constexpr std::array<PixelateLevel, 5> kPixelate = {
    PixelateLevel{0.35, 2}, PixelateLevel{0.7, 2}, PixelateLevel{1.0, 2},
    PixelateLevel{1.0, 4}, PixelateLevel{1.0, 8}};

// Acklam's rational approximation of the standard normal quantile.
inline double normal_quantile(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > phigh) {
    q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

// Poisson quantile via a shared uniform draw: exact inverse CDF for small
// rates, normal approximation beyond. The shared u couples severities so the
// severity-monotonicity invariant holds pathwise.
inline double poisson_quantile(double rate, double u) {
  if (rate <= 0.0) return 0.0;
  if (rate <= 30.0) {
    double pk = std::exp(-rate);
    double cdf = pk;
    double k = 0.0;
    while (cdf < u && k < 400.0) {
      k += 1.0;
      pk *= rate / k;
      cdf += pk;
    }
    return k;
  }
  const double z = normal_quantile(std::clamp(u, 1e-12, 1.0 - 1e-12));
  return std::max(0.0, std::round(rate + std::sqrt(rate) * z));
}

inline std::vector<double> box_average(const std::vector<double>& img,
                                       std::size_t h, std::size_t w,
                                       std::size_t block) {
  std::vector<double> out(img.size());
  for (std::size_t r0 = 0; r0 < h; r0 += block)
    for (std::size_t c0 = 0; c0 < w; c0 += block) {
      const std::size_t rend = std::min(r0 + block, h);
      const std::size_t cend = std::min(c0 + block, w);
      double mean = 0.0;
      for (std::size_t r = r0; r < rend; ++r)
        for (std::size_t c = c0; c < cend; ++c) mean += img[r * w + c];
      mean /= static_cast<double>((rend - r0) * (cend - c0));
      for (std::size_t r = r0; r < rend; ++r)
        for (std::size_t c = c0; c < cend; ++c) out[r * w + c] = mean;
    }
  return out;
}

inline std::vector<double> gaussian_blur_2d(const std::vector<double>& img,
                                            std::size_t h, std::size_t w,
                                            double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    ksum += v;
  }
  for (double& v : kernel) v /= ksum;

  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  std::vector<double> tmp(img.size()), out(img.size());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int cc = clampi(static_cast<int>(c) + i, 0, static_cast<int>(w) - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               img[r * w + static_cast<std::size_t>(cc)];
      }
      tmp[r * w + c] = acc;
    }
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = clampi(static_cast<int>(r) + i, 0, static_cast<int>(h) - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               tmp[static_cast<std::size_t>(rr) * w + c];
      }
      out[r * w + c] = acc;
    }
  return out;
}

}  // namespace corruption

/// Applies one corruption. The label and image shape are preserved and
/// pixels are clamped back to [0,1].
inline LabeledImage apply_corruption(const LabeledImage& image,
                                     const CorruptionSpec& spec) {
  if (spec.severity < 1 || spec.severity > 5)
    throw ParameterError("apply_corruption: severity must be in 1..5");
  const std::size_t h = image.pixels.dim(0), w = image.pixels.dim(1);
  const std::size_t s = static_cast<std::size_t>(spec.severity - 1);
  std::vector<double> px(image.pixels.data().begin(), image.pixels.data().end());
  Rng rng = make_rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.kind)));

  using namespace corruption;
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: {
      std::normal_distribution<double> n(0.0, 1.0);
      for (double& v : px) v += kGaussianSigma[s] * n(rng);
      break;
    }
    case CorruptionKind::shot_noise: {
      const double rate = kShotRate[s];
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      for (double& v : px) {
        const double u = uni(rng);
        v = poisson_quantile(rate * v, u) / rate;
      }
      break;
    }
    case CorruptionKind::contrast: {
      double mean = 0.0;
      for (double v : px) mean += v;
      mean /= static_cast<double>(px.size());
      for (double& v : px) v = mean + kContrastFactor[s] * (v - mean);
      break;
    }
    case CorruptionKind::brightness: {
      for (double& v : px) v += kBrightnessDelta[s];
      break;
    }
    case CorruptionKind::gaussian_blur: {
      px = gaussian_blur_2d(px, h, w, kBlurSigma[s]);
      break;
    }
    case CorruptionKind::pixelate: {
      const auto level = kPixelate[s];
      std::vector<double> avg = box_average(px, h, w, level.block);
      for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = (1.0 - level.blend) * px[i] + level.blend * avg[i];
      break;
    }
  }
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  return LabeledImage{Tensor::from_data({h, w}, std::move(px)), image.label};
}

/// Corrupts every image of a dataset with per-image seeds derived from the
/// base seed, keeping labels and ordering.
inline Dataset corrupt_dataset(const Dataset& clean, CorruptionKind kind,
                               int severity, std::uint64_t seed) {
  Dataset out;
  out.height = clean.height;
  out.width = clean.width;
  out.num_classes = clean.num_classes;
  out.seed = seed;
  out.items.reserve(clean.items.size());
  for (std::size_t i = 0; i < clean.items.size(); ++i) {
    CorruptionSpec spec{kind, severity, mix_seed(seed, i)};
    out.items.push_back(apply_corruption(clean.items[i], spec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flattening helpers and the dataset container file (bit-exact round trip).
// ---------------------------------------------------------------------------

inline Tensor flatten_images(const std::vector<LabeledImage>& images,
                             std::size_t begin, std::size_t count) {
  if (count == 0) throw ParameterError("flatten_images: empty batch");
  const std::size_t d = images[begin].pixels.numel();
  std::vector<double> buf(count * d);
  for (std::size_t i = 0; i < count; ++i) {
    auto src = images[begin + i].pixels.data();
    if (src.size() != d)
      throw DimensionError("flatten_images: inconsistent image sizes");
    std::copy(src.begin(), src.end(), buf.begin() + static_cast<long>(i * d));
  }
  return Tensor::from_data({count, d}, std::move(buf));
}

inline Tensor flatten_images(const std::vector<LabeledImage>& images) {
  return flatten_images(images, 0, images.size());
}

inline std::vector<int> labels_of(const std::vector<LabeledImage>& images) {
  std::vector<int> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(im.label);
  return out;
}

namespace io {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("unexpected end of file");
  return v;
}

}  // namespace io

inline void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_dataset: cannot open " + path);
  os.write("TTADSET1", 8);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(kDatasetFormatVersion));
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d.height));
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d.width));
  io::write_pod<std::int32_t>(os, d.num_classes);
  io::write_pod<std::uint64_t>(os, d.items.size());
  io::write_pod<std::uint64_t>(os, d.seed);
  for (const auto& im : d.items) io::write_pod<std::int32_t>(os, im.label);
  for (const auto& im : d.items)
    os.write(reinterpret_cast<const char*>(im.pixels.data().data()),
             static_cast<std::streamsize>(im.pixels.numel() * sizeof(double)));
  if (!os) throw IoError("save_dataset: write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_dataset: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "TTADSET1", 8) != 0)
    throw IoError("load_dataset: bad magic in " + path);
  const auto version = io::read_pod<std::uint32_t>(is);
  if (version != static_cast<std::uint32_t>(kDatasetFormatVersion))
    throw IoError("load_dataset: unsupported container version " +
                  std::to_string(version));
  Dataset d;
  d.height = io::read_pod<std::uint32_t>(is);
  d.width = io::read_pod<std::uint32_t>(is);
  d.num_classes = io::read_pod<std::int32_t>(is);
  const auto count = io::read_pod<std::uint64_t>(is);
  d.seed = io::read_pod<std::uint64_t>(is);
  std::vector<int> labels(count);
  for (auto& l : labels) l = io::read_pod<std::int32_t>(is);
  d.items.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::vector<double> px(d.height * d.width);
    is.read(reinterpret_cast<char*>(px.data()),
            static_cast<std::streamsize>(px.size() * sizeof(double)));
    if (!is) throw IoError("load_dataset: truncated pixel data in " + path);
    d.items.push_back(
        LabeledImage{Tensor::from_data({d.height, d.width}, std::move(px)),
                     labels[i]});
  }
  return d;
}

}  // namespace tta
