/**
 * @file image_io.hpp
 * @brief Binary netpbm (PGM/PPM) image I/O, bilinear resizing, and
 * directory-layout dataset loading/export.
 */
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"

namespace fewshot {

/// Decoded raster: planar [C,H,W] with values in [0,1].
struct RawImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
};

/// Reads a binary PGM (P5) or PPM (P6) file; 8- or 16-bit samples.
RawImage read_netpbm(const std::string& path);

/// Writes 8-bit binary PGM (1 channel) or PPM (3 channels); values clamped
/// to [0,1].
void write_netpbm(const std::string& path, const RawImage& image);

/// Bilinear resample to out_size x out_size (half-pixel-centre mapping).
RawImage bilinear_resize(const RawImage& image, int out_size);

/**
 * Loads a dataset laid out as root/<class_name>/<image file>. Every file in
 * each class directory must decode as netpbm; images are resized to
 * expected_size and scaled to [0,1]. Class names are the directory names in
 * lexicographic order.
 */
template <class T>
LabeledDataset<T> load_directory_dataset(const std::string& root, int expected_size = 84) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw DataError("load_directory_dataset: no such directory: " + root);
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw DataError("load_directory_dataset: no class directories under " + root);

  LabeledDataset<T> ds;
  ds.size = expected_size;
  ds.channels = 0;  // fixed by the first image
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw DataError("load_directory_dataset: class directory is empty: " + dir.string());
    const int class_id = ds.add_class(dir.filename().string());
    for (const auto& file : files) {
      RawImage img = read_netpbm(file.string());
      if (ds.channels == 0) ds.channels = img.channels;
      if (img.channels != ds.channels)
        throw DataError("load_directory_dataset: " + file.string() + " has " +
                        std::to_string(img.channels) + " channels, dataset uses " +
                        std::to_string(ds.channels));
      if (img.height != expected_size || img.width != expected_size)
        img = bilinear_resize(img, expected_size);
      ds.add_image(class_id, std::vector<T>(img.pixels.begin(), img.pixels.end()));
    }
  }
  return ds;
}

/// Writes a dataset to root/<class_name>/NNNN.pgm|ppm for inspection.
template <class T>
void export_dataset(const LabeledDataset<T>& ds, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  const char* ext = ds.channels == 3 ? ".ppm" : ".pgm";
  for (int c = 0; c < ds.num_classes(); ++c) {
    const fs::path dir = fs::path(root) / ds.class_names[static_cast<std::size_t>(c)];
    fs::create_directories(dir);
    int seq = 0;
    for (int idx : ds.class_index[static_cast<std::size_t>(c)]) {
      RawImage img;
      img.channels = ds.channels;
      img.height = ds.size;
      img.width = ds.size;
      const auto& px = ds.images[static_cast<std::size_t>(idx)];
      img.pixels.assign(px.begin(), px.end());
      char name[16];
      std::snprintf(name, sizeof(name), "%04d%s", seq++, ext);
      write_netpbm((dir / name).string(), img);
    }
  }
}

}  // namespace fewshot
