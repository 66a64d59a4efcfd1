#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fdct/data_synth.hpp"
#include "fdct/tensor_io.hpp"

namespace fs = std::filesystem;
using fdct::SynthSpec;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.seed = 42;
  s.classes = 6;
  s.per_class = 10;
  s.image_size = 32;
  return s;
}

std::string temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p.string();
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("pair synthesis is deterministic and in range") {
  auto spec = small_spec();
  auto a = fdct::synth_pair(spec, 2, 5);
  auto b = fdct::synth_pair(spec, 2, 5);
  CHECK(a.image_vis.values() == b.image_vis.values());
  CHECK(a.image_ir.values() == b.image_ir.values());
  for (float v : a.image_vis.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  auto c = fdct::synth_pair(spec, 2, 6);
  CHECK(a.image_vis.values() != c.image_vis.values());
}

TEST_CASE("zero misalignment and zero noise share geometry") {
  auto spec = small_spec();
  spec.misalign_px = 0.0;
  spec.misalign_deg = 0.0;
  spec.noise_vis = 0.0;
  spec.noise_ir = 0.0;
  fdct::PairGeometry g;
  fdct::synth_pair(spec, 1, 3, &g);
  CHECK(g.theta == 0.0);
  CHECK(g.tx == 0.0);
  CHECK(g.ty == 0.0);

  spec.misalign_px = 2.0;
  spec.misalign_deg = 5.0;
  fdct::synth_pair(spec, 1, 3, &g);
  CHECK(std::abs(g.theta) <= 5.0 * 3.14159265 / 180.0);
  CHECK(std::abs(g.tx) <= 2.0);
}

TEST_CASE("class attribute collision table") {
  // visible view (shape, vis_bit) identical for classes 0/1
  auto a0 = fdct::class_attrs(0), a1 = fdct::class_attrs(1);
  CHECK(a0.shape == a1.shape);
  CHECK(a0.vis_bit == a1.vis_bit);
  CHECK(a0.ir_bit != a1.ir_bit);
  // infrared view (shape, ir_bit) identical for classes 2/3
  auto a2 = fdct::class_attrs(2), a3 = fdct::class_attrs(3);
  CHECK(a2.shape == a3.shape);
  CHECK(a2.ir_bit == a3.ir_bit);
  CHECK(a2.vis_bit != a3.vis_bit);
  // classes 4/5 differ in both views
  auto a4 = fdct::class_attrs(4), a5 = fdct::class_attrs(5);
  CHECK(a4.vis_bit != a5.vis_bit);
  CHECK(a4.ir_bit != a5.ir_bit);
}

TEST_CASE("dataset generation is byte-identical under one seed") {
  auto spec = small_spec();
  const std::string d1 = temp_dir("fdct_ds_a");
  const std::string d2 = temp_dir("fdct_ds_b");
  fdct::generate_dataset(spec, d1);
  fdct::generate_dataset(spec, d2);

  auto rows1 = fdct::read_manifest(d1);
  auto rows2 = fdct::read_manifest(d2);
  REQUIRE(rows1.size() == rows2.size());
  CHECK(rows1.size() == 60);
  CHECK(slurp(d1 + "/manifest.csv") == slurp(d2 + "/manifest.csv"));
  for (std::size_t i = 0; i < rows1.size(); ++i) {
    CHECK(slurp(d1 + "/" + rows1[i].path_vis) == slurp(d2 + "/" + rows2[i].path_vis));
    CHECK(slurp(d1 + "/" + rows1[i].path_ir) == slurp(d2 + "/" + rows2[i].path_ir));
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("stratified split covers the dataset disjointly") {
  std::vector<int> labels;
  for (int c = 0; c < 6; ++c)
    for (int i = 0; i < 100; ++i) labels.push_back(c);
  auto splits = fdct::assign_splits(labels, 0.7, 0.2, 0.1, 9);
  REQUIRE(splits.size() == labels.size());
  std::map<int, std::map<std::string, int>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) counts[labels[i]][splits[i]]++;
  for (auto& [cls, m] : counts) {
    CHECK(m["train"] == 70);
    CHECK(m["test"] == 20);
    CHECK(m["val"] == 10);
  }
  auto splits2 = fdct::assign_splits(labels, 0.7, 0.2, 0.1, 9);
  CHECK(splits == splits2);
  auto splits3 = fdct::assign_splits(labels, 0.7, 0.2, 0.1, 10);
  CHECK(splits != splits3);

  std::vector<int> tiny{0, 0, 1, 1, 1};
  CHECK_THROWS_AS(fdct::assign_splits(tiny, 0.7, 0.2, 0.1, 1), fdct::ValueError);
}

TEST_CASE("loader batching and epoch permutation") {
  auto spec = small_spec();
  spec.per_class = 20;  // 120 samples, train split has 14 per class = 84
  const std::string dir = temp_dir("fdct_ds_loader");
  fdct::generate_dataset(spec, dir);

  fdct::PairLoader loader(dir, "train", 24, 7);
  const std::size_t n = loader.sample_count();
  CHECK(n == 84);
  CHECK(loader.batch_count() == 4);  // 24,24,24,12

  auto batches = loader.epoch(0);
  REQUIRE(batches.size() == 4);
  CHECK(batches[0].vis.shape() == fdct::Shape{24, 3, 32, 32});
  CHECK(batches[3].vis.shape() == fdct::Shape{12, 3, 32, 32});

  std::set<std::string> seen;
  for (auto& b : batches)
    for (auto& id : b.pair_ids) CHECK(seen.insert(id).second);  // each sample exactly once
  CHECK(seen.size() == n);

  auto again = loader.epoch(0);
  CHECK(again[0].pair_ids == batches[0].pair_ids);
  auto other = loader.epoch(1);
  CHECK(other[0].pair_ids != batches[0].pair_ids);

  CHECK_THROWS_AS(fdct::PairLoader(dir, "nope", 24, 7), fdct::ValueError);
  fs::remove_all(dir);
}

TEST_CASE("batch size 24 over 100 samples gives 24,24,24,24,4") {
  auto spec = small_spec();
  spec.per_class = 17;  // 102 pairs, first 100 forced into one split below
  const std::string dir = temp_dir("fdct_ds_100");
  fdct::generate_dataset(spec, dir);
  // rewrite the manifest so exactly 100 rows land in one split
  auto rows = fdct::read_manifest(dir);
  REQUIRE(rows.size() >= 100);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].split = i < 100 ? "train" : "val";
  fdct::write_manifest(dir, rows);

  fdct::PairLoader loader(dir, "train", 24, 1);
  CHECK(loader.sample_count() == 100);
  auto batches = loader.epoch(0);
  REQUIRE(batches.size() == 5);
  const std::int64_t expect[5] = {24, 24, 24, 24, 4};
  for (int i = 0; i < 5; ++i) CHECK(batches[static_cast<std::size_t>(i)].vis.dim(0) == expect[i]);
  fs::remove_all(dir);
}

TEST_CASE("fusion headroom: concatenated probe beats single-modality probes") {
  auto spec = small_spec();
  spec.per_class = 60;
  spec.seed = 3;
  const std::string dir = temp_dir("fdct_ds_probe");
  fdct::generate_dataset(spec, dir);

  auto rows = fdct::read_manifest(dir);
  std::vector<std::vector<float>> xv_tr, xi_tr, xc_tr, xv_te, xi_te, xc_te;
  std::vector<int> y_tr, y_te;
  for (const auto& r : rows) {
    if (r.split == "val") continue;
    auto iv = fdct::load_fdt<float>(dir + "/" + r.path_vis).values();
    auto ii = fdct::load_fdt<float>(dir + "/" + r.path_ir).values();
    std::vector<float> cat = iv;
    cat.insert(cat.end(), ii.begin(), ii.end());
    if (r.split == "train") {
      xv_tr.push_back(iv);
      xi_tr.push_back(ii);
      xc_tr.push_back(cat);
      y_tr.push_back(r.label);
    } else {
      xv_te.push_back(iv);
      xi_te.push_back(ii);
      xc_te.push_back(cat);
      y_te.push_back(r.label);
    }
  }
  const double acc_v = fdct::linear_probe_accuracy(xv_tr, y_tr, xv_te, y_te, 6);
  const double acc_i = fdct::linear_probe_accuracy(xi_tr, y_tr, xi_te, y_te, 6);
  const double acc_c = fdct::linear_probe_accuracy(xc_tr, y_tr, xc_te, y_te, 6);
  INFO("vis=" << acc_v << " ir=" << acc_i << " concat=" << acc_c);
  CHECK(acc_c > acc_v);
  CHECK(acc_c > acc_i);
  fs::remove_all(dir);
}

TEST_CASE("pnm and png import") {
  const std::string dir = temp_dir("fdct_img");
  fs::create_directories(dir);

  // binary PGM 4x2 ramp
  {
    std::ofstream os(dir + "/a.pgm", std::ios::binary);
    os << "P5\n4 2\n255\n";
    const unsigned char px[8] = {0, 51, 102, 153, 204, 255, 10, 20};
    os.write(reinterpret_cast<const char*>(px), 8);
  }
  auto g = fdct::load_image_8bit(dir + "/a.pgm");
  CHECK(g.shape() == fdct::Shape{3, 2, 4});
  CHECK(g.at({0, 0, 1}) == doctest::Approx(51.0 / 255.0));
  CHECK(g.at({2, 1, 1}) == doctest::Approx(1.0));  // replicated channels

  // reference 8x8 RGB PNG (x*30, y*30, 128)
  {
    static const unsigned char png[] = {
        137, 80, 78, 71, 13, 10, 26, 10, 0, 0, 0, 13, 73, 72, 68, 82, 0, 0, 0, 8, 0, 0, 0, 8,
        8, 2, 0, 0, 0, 75, 109, 41, 220, 0, 0, 0, 25, 73, 68, 65, 84, 120, 156, 99, 100, 96,
        104, 144, 99, 96, 192, 68, 44, 12, 114, 12, 88, 193, 224, 148, 0, 0, 88, 217, 2, 66,
        218, 189, 243, 46, 0, 0, 0, 0, 73, 69, 78, 68, 174, 66, 96, 130};
    std::ofstream os(dir + "/b.png", std::ios::binary);
    os.write(reinterpret_cast<const char*>(png), sizeof(png));
  }
  auto p = fdct::load_image_8bit(dir + "/b.png");
  CHECK(p.shape() == fdct::Shape{3, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      CHECK(p.at({0, y, x}) == doctest::Approx(x * 30 / 255.0).epsilon(1e-6));
      CHECK(p.at({1, y, x}) == doctest::Approx(y * 30 / 255.0).epsilon(1e-6));
      CHECK(p.at({2, y, x}) == doctest::Approx(128 / 255.0).epsilon(1e-6));
    }

  // import a paired listing
  {
    std::ofstream os(dir + "/list.csv");
    os << "pair_id,label,path_vis,path_ir\n";
    for (int i = 0; i < 9; ++i)
      os << "p" << i << "," << i % 3 << "," << dir << "/b.png," << dir << "/a.pgm\n";
  }
  fdct::import_pairs(dir + "/list.csv", dir + "/out", 16, 5);
  auto rows = fdct::read_manifest(dir + "/out");
  CHECK(rows.size() == 9);
  auto t = fdct::load_fdt<float>(dir + "/out/" + rows[0].path_vis);
  CHECK(t.shape() == fdct::Shape{3, 16, 16});
  fs::remove_all(dir);
}

TEST_CASE("resize identity when sizes match") {
  fdct::SynthSpec spec = small_spec();
  auto s = fdct::synth_pair(spec, 0, 0);
  auto r = fdct::resize_image(s.image_vis, 32, 32);
  CHECK(r.values() == s.image_vis.values());
}
