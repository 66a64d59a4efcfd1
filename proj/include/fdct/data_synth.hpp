#pragma once

#include <string>
#include <vector>

#include "fdct/tensor.hpp"

namespace fdct {

// Two-"sensor" synthetic pairs. Both modalities render the same per-class
// parametric shape; each modality carries one extra class-informative texture
// component that the other modality replaces with nuisance texture:
//   - visible: shading ramp orientation (corrupted in infrared by speckle and
//     a randomly oriented ramp)
//   - infrared: hot-spot count/placement (mimicked in visible by glints at
//     random positions)
// Classes are laid out so some pairs collide in the visible view and others
// in the infrared view; fusing both modalities separates every class.
struct SynthSpec {
  std::uint64_t seed = 1;
  int classes = 6;
  int per_class = 200;
  int image_size = 32;
  double misalign_px = 2.0;   // infrared rigid translation bound
  double misalign_deg = 5.0;  // infrared rotation bound
  double noise_vis = 0.12;
  double noise_ir = 0.12;
  double split_train = 0.7, split_test = 0.2, split_val = 0.1;

  void validate() const;
};

struct PairedSample {
  TensorT<float> image_vis;  // [3,H,W] in [0,1]
  TensorT<float> image_ir;   // [3,H,W] in [0,1]
  int label = 0;
  std::string pair_id;
};

// Per-pair latent geometry, exposed for tests.
struct PairGeometry {
  double cx = 0, cy = 0, radius = 0;   // shared shape placement
  double theta = 0, tx = 0, ty = 0;    // infrared rigid misalignment
};

// Class attribute table: shared shape family plus the two modality bits.
struct ClassAttrs {
  int shape = 0;    // 0 disc, 1 square, 2 diamond
  int vis_bit = 0;  // shading orientation
  int ir_bit = 0;   // hot-spot pattern
};
ClassAttrs class_attrs(int cls);

PairedSample synth_pair(const SynthSpec& spec, int cls, int index, PairGeometry* geom = nullptr);

struct ManifestRow {
  std::string pair_id;
  int label = 0;
  std::string split;  // train/test/val
  std::string path_vis, path_ir;  // relative to the dataset directory
};

// Writes images as FDT files plus manifest.csv with stratified splits.
// Byte-identical for identical specs.
void generate_dataset(const SynthSpec& spec, const std::string& dir);

std::vector<ManifestRow> read_manifest(const std::string& dir);
void write_manifest(const std::string& dir, const std::vector<ManifestRow>& rows);

// Stratified split assignment over labels; every split non-empty per class.
std::vector<std::string> assign_splits(const std::vector<int>& labels, double train, double test,
                                       double val, std::uint64_t seed);

struct Batch {
  TensorT<float> vis, ir;  // [b,3,H,W]
  std::vector<int> labels;
  std::vector<std::string> pair_ids;
};

// Streams seeded shuffled batches over one split; the final partial batch is
// included.
class PairLoader {
 public:
  PairLoader(std::string dataset_dir, const std::string& split, int batch_size, std::uint64_t seed);

  std::size_t sample_count() const { return rows_.size(); }
  std::size_t batch_count() const;
  int image_size() const { return image_size_; }

  // Deterministic epoch order: same (seed, epoch) gives the same batches.
  std::vector<Batch> epoch(int epoch_index) const;

  const std::vector<ManifestRow>& rows() const { return rows_; }

 private:
  std::string dir_;
  std::vector<ManifestRow> rows_;
  int batch_size_;
  std::uint64_t seed_;
  int image_size_ = 0;
};

// Multinomial logistic probe on raw pixels: full-batch gradient descent,
// deterministic. Returns accuracy on the eval rows.
double linear_probe_accuracy(const std::vector<std::vector<float>>& train_x, const std::vector<int>& train_y,
                             const std::vector<std::vector<float>>& eval_x, const std::vector<int>& eval_y,
                             int classes, int iters = 400, double lr = 0.5);

// 8-bit PGM/PPM (P2/P3/P5/P6) or PNG (8-bit gray/RGB/RGBA, non-interlaced)
// decoded to a [3,H,W] float tensor in [0,1].
TensorT<float> load_image_8bit(const std::string& path);

// Bilinear resize of a [3,H,W] tensor.
TensorT<float> resize_image(const TensorT<float>& img, int out_h, int out_w);

// Converts a CSV listing (pair_id,label,path_vis,path_ir) of 8-bit image
// pairs into an FDT dataset directory with stratified splits.
void import_pairs(const std::string& listing_csv, const std::string& out_dir, int image_size,
                  std::uint64_t split_seed);

}  // namespace fdct
