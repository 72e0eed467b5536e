// @file synthetic.hpp
// Procedural synthetic dataset generator: per-class shape/texture archetypes
// with position/rotation jitter and a noise dial that injects additive
// structured nuisance (low-frequency background waves, global offsets) plus
// white pixel noise. At noise 0 classes are cleanly separable in pixel space;
// as noise rises, image distances become nuisance-dominated and classes grow
// confusable for raw-pixel and untrained-feature classifiers while remaining
// recoverable by filters that reject smooth backgrounds.
#pragma once

#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "fewshot/dataset.hpp"

namespace fewshot {

namespace detail {

struct ArchetypeParams {
  int kind = 0;       // 0 blob, 1 bar, 2 ring, 3 checker, 4 gradient, 5 cross, 6 dots
  double scale = 1.0; // archetype size relative to image half-extent
  double angle = 0.0; // base orientation
  double phase = 0.0; // channel phase offset
  double cx = 0.0, cy = 0.0; // base center offset
};

inline ArchetypeParams archetype_for_class(int c) {
  ArchetypeParams p;
  p.kind = c % 7;
  const int variant = c / 7;
  p.scale = 1.0 / (1.0 + 0.45 * variant);
  p.angle = 0.6180339887 * 2.0 * M_PI * c + 1.1 * variant;
  p.phase = 0.37 * c;
  const double golden = 2.399963229728653; // golden angle
  const double r = std::min(0.45, 0.30 * variant);
  p.cx = r * std::cos(golden * (c + 3));
  p.cy = r * std::sin(golden * (c + 3));
  return p;
}

// Intensity of the archetype at rotated, centered coordinates (x, y).
// Extended patterns (checker/gradient/dots) are confined to a soft disc so
// every class has a comparable energy footprint.
inline double archetype_intensity(const ArchetypeParams& p, double x, double y) {
  const double s = p.scale;
  const double r = std::sqrt(x * x + y * y);
  const double rw = r / (0.85 * s);
  const double window = std::exp(-(rw * rw) * (rw * rw));
  switch (p.kind) {
    case 0: { // blob
      const double w = 0.45 * s;
      return std::exp(-(r * r) / (w * w));
    }
    case 1: { // bar
      const double w = 0.18 * s;
      return std::exp(-(y * y) / (w * w)) * (std::abs(x) < 0.9 * s ? 1.0 : 0.0);
    }
    case 2: { // ring
      const double d = (r - 0.55 * s) / 0.12;
      return std::exp(-d * d);
    }
    case 3: { // checker grid
      const double period = 0.35 * s;
      return window * 0.5 * (1.0 + std::cos(M_PI * x / period) * std::cos(M_PI * y / period));
    }
    case 4: { // oriented gradient
      return window * std::clamp(0.5 * (1.0 + x / std::max(s, 1e-9)), 0.0, 1.0);
    }
    case 5: { // cross
      const double w = 0.16 * s;
      const double a = std::exp(-(y * y) / (w * w));
      const double b = std::exp(-(x * x) / (w * w));
      return std::max(a, b);
    }
    default: { // dots
      const double period = 0.5 * s;
      const double gx = 0.5 + 0.5 * std::cos(2.0 * M_PI * x / period);
      const double gy = 0.5 + 0.5 * std::cos(2.0 * M_PI * y / period);
      const double v = gx * gy;
      return window * 1.4 * v * v * v;
    }
  }
}

} // namespace detail

// Generates n_classes procedural classes with per_class images of
// channels x image_size x image_size in [0,1] plus additive noise.
// Deterministic for a fixed (seed, parameters) tuple.
template <typename T>
LabeledDataset<T> generate_synthetic_dataset(int n_classes, int per_class,
                                             int image_size, double noise_level,
                                             std::uint64_t seed, int channels = 1) {
  if (n_classes < 2) throw DataError("generate_synthetic_dataset: need n_classes >= 2, got " +
                                     std::to_string(n_classes));
  if (per_class < 1 || image_size < 4)
    throw DataError("generate_synthetic_dataset: per_class and image_size must be positive");
  if (channels != 1 && channels != 3)
    throw DataError("generate_synthetic_dataset: channels must be 1 or 3");

  LabeledDataset<T> ds;
  ds.channels = channels;
  ds.size = image_size;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int S = image_size;
  std::vector<T> img(static_cast<std::size_t>(channels) * S * S);
  for (int c = 0; c < n_classes; ++c) {
    char name[24];
    std::snprintf(name, sizeof(name), "class_%02d", c);
    ds.add_class(name);
    const auto ap = detail::archetype_for_class(c);
    for (int i = 0; i < per_class; ++i) {
      // geometric jitter: shifts, tilt, size, brightness
      const double dx = (unit(rng) * 2.0 - 1.0) * 0.16;
      const double dy = (unit(rng) * 2.0 - 1.0) * 0.16;
      const double tilt = (unit(rng) * 2.0 - 1.0) * 0.35;
      const double size_gain = 0.85 + 0.33 * unit(rng);
      const double amp = 0.80 + 0.40 * unit(rng);
      const double theta = ap.angle + tilt;
      const double ct = std::cos(theta), st = std::sin(theta);
      detail::ArchetypeParams jap = ap;
      jap.scale = ap.scale * size_gain;
      for (int ch = 0; ch < channels; ++ch) {
        const double ch_gain =
            channels == 1 ? 1.0 : 0.55 + 0.45 * std::cos(2.0 * M_PI * (ap.phase + double(ch) / 3.0));
        // per-channel structured nuisance: low-frequency plane waves + offset
        constexpr int kWaves = 3;
        double wave_a[kWaves], wave_f[kWaves], wave_cx[kWaves], wave_cy[kWaves], wave_ph[kWaves];
        for (int w = 0; w < kWaves; ++w) {
          wave_a[w] = noise_level * (0.85 + 1.90 * unit(rng));
          wave_f[w] = 0.25 + 0.95 * unit(rng); // cycles across the image extent
          const double dir = unit(rng) * M_PI;
          wave_cx[w] = std::cos(dir);
          wave_cy[w] = std::sin(dir);
          wave_ph[w] = unit(rng) * 2.0 * M_PI;
        }
        const double offset = noise_level * 1.10 * gauss(rng);
        for (int yi = 0; yi < S; ++yi) {
          const double y0 = 2.0 * yi / (S - 1) - 1.0;
          for (int xi = 0; xi < S; ++xi) {
            const double x0 = 2.0 * xi / (S - 1) - 1.0;
            const double xs = x0 - ap.cx - dx;
            const double ys = y0 - ap.cy - dy;
            const double xr = ct * xs + st * ys;
            const double yr = -st * xs + ct * ys;
            double v = amp * ch_gain * detail::archetype_intensity(jap, xr, yr);
            for (int w = 0; w < kWaves; ++w)
              v += wave_a[w] *
                   std::cos(M_PI * wave_f[w] * (wave_cx[w] * x0 + wave_cy[w] * y0) + wave_ph[w]);
            v += offset + noise_level * 0.20 * gauss(rng);
            img[static_cast<std::size_t>(ch) * S * S + static_cast<std::size_t>(yi) * S + xi] =
                static_cast<T>(v);
          }
        }
      }
      ds.add_image(c, img);
    }
  }
  return ds;
}

} // namespace fewshot
