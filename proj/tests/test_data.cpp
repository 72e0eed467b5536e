#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/image_io.hpp"
#include "fewshot/synthetic.hpp"
#include "oracles.hpp"

using fewshot::DataError;
using fewshot::LabeledDataset;
using fewshot::SplitSpec;

namespace {

LabeledDataset<double> tiny_dataset(int n_classes, int per_class, int size = 4) {
  LabeledDataset<double> ds;
  ds.channels = 1;
  ds.size = size;
  for (int c = 0; c < n_classes; ++c) {
    const int id = ds.add_class("c" + std::to_string(c));
    for (int s = 0; s < per_class; ++s)
      ds.add_image(id, std::vector<double>(static_cast<std::size_t>(size) * size,
                                           c + 0.01 * s));
  }
  return ds;
}

template <class C>
std::set<int> as_set(const C& v) {
  return std::set<int>(v.begin(), v.end());
}

}  // namespace

TEST_CASE("make_split covers 19 classes as disjoint 9/5/5") {
  auto ds = tiny_dataset(19, 40);
  auto split = fewshot::make_split(ds, 9, 5, 5, 123);
  CHECK(split.train_classes.size() == 9);
  CHECK(split.val_classes.size() == 5);
  CHECK(split.test_classes.size() == 5);
  std::set<int> all;
  for (int c : split.train_classes) all.insert(c);
  for (int c : split.val_classes) all.insert(c);
  for (int c : split.test_classes) all.insert(c);
  CHECK(all.size() == 19);  // disjoint and covering

  auto again = fewshot::make_split(ds, 9, 5, 5, 123);
  CHECK(again.train_classes == split.train_classes);
  CHECK(again.val_classes == split.val_classes);
  CHECK(again.test_classes == split.test_classes);
}

TEST_CASE("make_split fails with a named shortfall") {
  auto ds = tiny_dataset(14, 40);
  CHECK_THROWS_WITH_AS(fewshot::make_split(ds, 9, 5, 5, 1),
                       doctest::Contains("only 14"), DataError);
}

TEST_CASE("make_split excludes classes under the minimum sample count") {
  auto ds = tiny_dataset(5, 40);
  const int small = ds.add_class("small");
  for (int i = 0; i < 39; ++i)
    ds.add_image(small, std::vector<double>(16, 0.0));
  auto split = fewshot::make_split(ds, 3, 1, 1, 5);
  std::set<int> all;
  for (int c : split.train_classes) all.insert(c);
  for (int c : split.val_classes) all.insert(c);
  for (int c : split.test_classes) all.insert(c);
  CHECK_FALSE(all.count(small));
  CHECK_THROWS_AS(fewshot::make_split(ds, 4, 1, 1, 5), DataError);
  // Lowering the threshold admits the small class.
  CHECK_NOTHROW(fewshot::make_split(ds, 4, 1, 1, 5, 39));
}

TEST_CASE("different seeds give different splits") {
  auto ds = tiny_dataset(19, 40);
  auto base = fewshot::make_split(ds, 9, 5, 5, 0);
  int differing = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto other = fewshot::make_split(ds, 9, 5, 5, seed);
    if (other.train_classes != base.train_classes) ++differing;
  }
  CHECK(differing >= 19);  // collisions are vanishingly rare
}

TEST_CASE("labeled/unlabeled partition respects the fraction per class") {
  auto ds = tiny_dataset(6, 60);
  auto part = fewshot::partition_labeled_unlabeled(ds, 0.4, 9);
  for (int c = 0; c < ds.num_classes(); ++c) {
    const auto total = ds.class_index[static_cast<std::size_t>(c)].size();
    const auto lab = part.labeled[static_cast<std::size_t>(c)].size();
    const auto unlab = part.unlabeled[static_cast<std::size_t>(c)].size();
    CHECK(lab + unlab == total);
    CHECK(lab == 24);  // round(0.4 * 60)
    // No index appears on both sides.
    auto l = as_set(part.labeled[static_cast<std::size_t>(c)]);
    for (int idx : part.unlabeled[static_cast<std::size_t>(c)]) CHECK_FALSE(l.count(idx));
    const double frac = static_cast<double>(lab) / static_cast<double>(total);
    CHECK(std::abs(frac - 0.4) <= 1.0 / static_cast<double>(total) + 1e-12);
  }
  CHECK_THROWS_AS(fewshot::partition_labeled_unlabeled(ds, 0.0, 1), DataError);
  CHECK_THROWS_AS(fewshot::partition_labeled_unlabeled(ds, 1.2, 1), DataError);

  // Fraction 1.0: everything labeled.
  auto all = fewshot::partition_labeled_unlabeled(ds, 1.0, 9);
  for (int c = 0; c < ds.num_classes(); ++c)
    CHECK(all.unlabeled[static_cast<std::size_t>(c)].empty());
}

TEST_CASE("supervised episode: 5-shot 5-way with 5 targets") {
  auto ds = tiny_dataset(8, 12);
  std::vector<int> phase = {0, 1, 2, 3, 4, 5, 6, 7};
  std::mt19937_64 rng(77);
  auto ep = fewshot::sample_episode(ds, phase, 5, 5, 5, 0, 0, rng);
  CHECK(ep.support_indices.size() == 25);
  CHECK(ep.target_indices.size() == 25);
  CHECK(ep.unlabeled_indices.empty());
  CHECK(ep.classes.size() == 5);

  // Support and target are disjoint index sets.
  auto s = as_set(ep.support_indices);
  CHECK(s.size() == 25);
  for (int idx : ep.target_indices) CHECK_FALSE(s.count(idx));

  // Target classes match support classes, with k (resp. t) images each.
  for (int local = 0; local < 5; ++local) {
    const int cls = ep.classes[static_cast<std::size_t>(local)];
    int sup = 0, tar = 0;
    for (std::size_t i = 0; i < ep.support_indices.size(); ++i)
      if (ep.support_labels[i] == local) {
        CHECK(ds.labels[static_cast<std::size_t>(ep.support_indices[i])] == cls);
        ++sup;
      }
    for (std::size_t i = 0; i < ep.target_indices.size(); ++i)
      if (ep.target_labels[i] == local) {
        CHECK(ds.labels[static_cast<std::size_t>(ep.target_indices[i])] == cls);
        ++tar;
      }
    CHECK(sup == 5);
    CHECK(tar == 5);
  }
}

TEST_CASE("episode sampling is deterministic per rng state") {
  auto ds = tiny_dataset(8, 12);
  std::vector<int> phase = {0, 1, 2, 3, 4, 5, 6, 7};
  std::mt19937_64 a(5), b(5);
  auto e1 = fewshot::sample_episode(ds, phase, 2, 3, 2, 0, 0, a);
  auto e2 = fewshot::sample_episode(ds, phase, 2, 3, 2, 0, 0, b);
  CHECK(e1.classes == e2.classes);
  CHECK(e1.support_indices == e2.support_indices);
  CHECK(e1.target_indices == e2.target_indices);
}

TEST_CASE("1-shot 2-way on a 2x2 dataset partitions it exactly") {
  auto ds = tiny_dataset(2, 2);
  std::mt19937_64 rng(3);
  auto ep = fewshot::sample_episode(ds, {0, 1}, 1, 2, 1, 0, 0, rng);
  std::set<int> used(ep.support_indices.begin(), ep.support_indices.end());
  used.insert(ep.target_indices.begin(), ep.target_indices.end());
  CHECK(used == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("semi-supervised episode draws u per class plus distractors") {
  auto ds = tiny_dataset(10, 30);
  std::vector<int> phase = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto part = fewshot::partition_labeled_unlabeled(ds, 0.4, 1);
  std::mt19937_64 rng(9);
  auto ep = fewshot::sample_episode(ds, phase, 1, 5, 3, 5, 3, rng, &part);
  CHECK(ep.unlabeled_indices.size() == 5 * (5 + 3));
  CHECK(ep.distractor_classes.size() == 3);

  // Distractors come from outside the episode classes.
  auto cls = as_set(ep.classes);
  for (int d : ep.distractor_classes) CHECK_FALSE(cls.count(d));

  // Unlabeled indices are disjoint from support and target, and unique.
  std::set<int> st(ep.support_indices.begin(), ep.support_indices.end());
  st.insert(ep.target_indices.begin(), ep.target_indices.end());
  auto ul = as_set(ep.unlabeled_indices);
  CHECK(ul.size() == ep.unlabeled_indices.size());
  for (int idx : ul) CHECK_FALSE(st.count(idx));

  // Support/target come from the labeled partition.
  for (int idx : ep.support_indices) {
    const int c = ds.labels[static_cast<std::size_t>(idx)];
    const auto& lab = part.labeled[static_cast<std::size_t>(c)];
    CHECK(std::find(lab.begin(), lab.end(), idx) != lab.end());
  }
}

TEST_CASE("episode sampling errors name the offending class") {
  auto ds = tiny_dataset(4, 3);
  std::mt19937_64 rng(1);
  CHECK_THROWS_WITH_AS(fewshot::sample_episode(ds, {0, 1}, 2, 2, 2, 0, 0, rng),
                       doctest::Contains("need k+t = 4"), DataError);
  CHECK_THROWS_AS(fewshot::sample_episode(ds, {0, 1}, 1, 3, 1, 0, 0, rng), DataError);
  CHECK_THROWS_WITH_AS(fewshot::sample_episode(ds, {0, 1, 2}, 1, 2, 1, 5, 0, rng),
                       doctest::Contains("no partition"), DataError);
  auto part = fewshot::partition_labeled_unlabeled(ds, 0.4, 1);
  // 3 images per class: 1 labeled, 2 unlabeled -> u=5 unsatisfiable.
  CHECK_THROWS_WITH_AS(fewshot::sample_episode(ds, {0, 1, 2}, 1, 2, 0, 5, 0, rng, &part),
                       doctest::Contains("unlabeled"), DataError);
}

TEST_CASE("synthetic dataset is seed-deterministic") {
  auto a = fewshot::generate_synthetic_dataset<float>(4, 3, 16, 0.7, 99);
  auto b = fewshot::generate_synthetic_dataset<float>(4, 3, 16, 0.7, 99);
  auto c = fewshot::generate_synthetic_dataset<float>(4, 3, 16, 0.7, 100);
  REQUIRE(a.num_images() == 12);
  bool identical = true, differs = false;
  for (int i = 0; i < a.num_images(); ++i) {
    identical = identical && a.images[static_cast<std::size_t>(i)] == b.images[static_cast<std::size_t>(i)];
    differs = differs || a.images[static_cast<std::size_t>(i)] != c.images[static_cast<std::size_t>(i)];
  }
  CHECK(identical);
  CHECK(differs);
  CHECK(a.class_names[0] == "class_00");
  CHECK_THROWS_AS(fewshot::generate_synthetic_dataset<float>(1, 3, 16, 0.0, 1), DataError);
}

TEST_CASE("noise-free synthetic classes are centroid-separable") {
  auto ds = fewshot::generate_synthetic_dataset<double>(2, 20, 32, 0.0, 7);
  std::vector<int> train_idx, eval_idx;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 20; ++i)
      (i < 10 ? train_idx : eval_idx).push_back(ds.class_index[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)]);
  CHECK(oracles::centroid_pixel_accuracy(ds, train_idx, eval_idx) == 1.0);
}

TEST_CASE("raising noise_level measurably degrades pixel-space separability") {
  auto split_half = [](const LabeledDataset<double>& ds, std::vector<int>& tr, std::vector<int>& ev) {
    for (const auto& idx : ds.class_index)
      for (std::size_t i = 0; i < idx.size(); ++i) (i < idx.size() / 2 ? tr : ev).push_back(idx[i]);
  };
  auto clean = fewshot::generate_synthetic_dataset<double>(18, 20, 32, 0.0, 31);
  auto noisy = fewshot::generate_synthetic_dataset<double>(18, 20, 32, 2.0, 31);
  std::vector<int> tr_c, ev_c, tr_n, ev_n;
  split_half(clean, tr_c, ev_c);
  split_half(noisy, tr_n, ev_n);
  const double acc_clean = oracles::centroid_pixel_accuracy(clean, tr_c, ev_c);
  const double acc_noisy = oracles::centroid_pixel_accuracy(noisy, tr_n, ev_n);
  INFO("clean ", acc_clean, " noisy ", acc_noisy);
  CHECK(acc_clean > 0.9);
  CHECK(acc_noisy < acc_clean - 0.05);
}

TEST_CASE("netpbm round-trip and bilinear resize") {
  fewshot::RawImage img;
  img.channels = 1;
  img.height = 3;
  img.width = 5;
  img.pixels.resize(15);
  for (std::size_t i = 0; i < 15; ++i) img.pixels[i] = static_cast<double>(i) / 14.0;
  const std::string path = "/tmp/fewshot_io_test.pgm";
  fewshot::write_netpbm(path, img);
  auto back = fewshot::read_netpbm(path);
  CHECK(back.channels == 1);
  CHECK(back.height == 3);
  CHECK(back.width == 5);
  for (std::size_t i = 0; i < 15; ++i)
    CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(0.005));
  std::filesystem::remove(path);

  // Constant image stays constant under resize; ramp stays monotone.
  fewshot::RawImage flat;
  flat.channels = 3;
  flat.height = 10;
  flat.width = 6;
  flat.pixels.assign(180, 0.25);
  auto resized = fewshot::bilinear_resize(flat, 84);
  CHECK(resized.height == 84);
  CHECK(resized.width == 84);
  for (double v : resized.pixels) CHECK(v == doctest::Approx(0.25));

  auto ramp = fewshot::bilinear_resize(img, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 1; j < 8; ++j)
      CHECK(ramp.pixels[static_cast<std::size_t>(i) * 8 + j] >=
            ramp.pixels[static_cast<std::size_t>(i) * 8 + j - 1]);

  CHECK_THROWS_AS(fewshot::read_netpbm("/tmp/does_not_exist.pgm"), DataError);
}

TEST_CASE("directory datasets export and reload") {
  const std::string root = "/tmp/fewshot_dirdata_test";
  std::filesystem::remove_all(root);
  auto ds = fewshot::generate_synthetic_dataset<float>(2, 3, 100, 0.0, 5);
  ds.size = 100;  // exported at generation size
  fewshot::export_dataset(ds, root);

  auto loaded = fewshot::load_directory_dataset<float>(root, 84);
  CHECK(loaded.num_classes() == 2);
  CHECK(loaded.num_images() == 6);
  CHECK(loaded.channels == 1);
  CHECK(loaded.size == 84);
  CHECK(loaded.image_numel() == 84u * 84u);
  CHECK(loaded.class_names[0] == "class_00");
  for (const auto& img : loaded.images)
    for (float v : img) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }

  CHECK_THROWS_AS(fewshot::load_directory_dataset<float>("/tmp/fewshot_no_such_dir", 84),
                  DataError);
  std::filesystem::create_directories(root + "/empty_class");
  CHECK_THROWS_WITH_AS(fewshot::load_directory_dataset<float>(root, 84),
                       doctest::Contains("empty"), DataError);
  std::filesystem::remove_all(root);
}

TEST_CASE("split files persist class names and seed") {
  auto ds = tiny_dataset(19, 40);
  auto split = fewshot::make_split(ds, 9, 5, 5, 4242);
  const std::string path = "/tmp/fewshot_split_test.json";
  fewshot::save_split(path, split, ds.class_names);
  auto loaded = fewshot::load_split(path, ds.class_names);
  CHECK(loaded.seed == 4242);
  CHECK(loaded.train_classes == split.train_classes);
  CHECK(loaded.val_classes == split.val_classes);
  CHECK(loaded.test_classes == split.test_classes);

  // Unknown class names are rejected.
  std::vector<std::string> other_names = {"x"};
  CHECK_THROWS_AS(fewshot::load_split(path, other_names), DataError);
  std::filesystem::remove(path);
}
