#include "fdct/data_synth.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fdct/ops.hpp"
#include "fdct/rng.hpp"
#include "fdct/tensor_io.hpp"

namespace fs = std::filesystem;

namespace fdct {

void SynthSpec::validate() const {
  if (classes < 2) throw ValueError("synth spec needs at least 2 classes");
  if (per_class < 1) throw ValueError("synth spec needs at least 1 sample per class");
  if (image_size < 8 || image_size % 4 != 0)
    throw ValueError("synth image size must be >= 8 and divisible by 4");
  if (std::abs(split_train + split_test + split_val - 1.0) > 1e-9)
    throw ValueError("split ratios must sum to 1");
}

ClassAttrs class_attrs(int cls) {
  // the first six classes pin the collision structure:
  //   0/1 identical in the visible view, 2/3 identical in the infrared view
  static const ClassAttrs table[6] = {
      {0, 0, 0}, {0, 0, 1}, {1, 0, 0}, {1, 1, 0}, {2, 0, 0}, {2, 1, 1},
  };
  if (cls < 6) return table[cls];
  ClassAttrs a;
  a.shape = cls % 3;
  a.vis_bit = (cls / 3) % 2;
  a.ir_bit = (cls / 6) % 2;
  return a;
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct SceneParams {
  ClassAttrs attrs;
  double cx, cy, radius;
  double scene_level;             // per-pair brightness factor seen by both sensors
  double shape_rot, shape_aspect; // shared pose jitter
  double edge;                    // shared edge softness
  double bg_amp, bg_fx, bg_fy, bg_phx, bg_phy;  // shared background field
  double blob_x, blob_y, blob_amp, blob_sigma;  // shared distractor
  // visible nuisance
  double illum0, illum_x, illum_y;
  double glint_x[2], glint_y[2];
  double tint_g, tint_b;
  // infrared nuisance
  double ir_gain;
  double speckle_phase_x, speckle_phase_y, speckle_freq;
  double ramp_dir;  // random shading direction seen by the infrared sensor
};

double shape_mask(const SceneParams& p, double x, double y) {
  const double u0 = x - p.cx, v0 = y - p.cy;
  const double cr = std::cos(p.shape_rot), sr = std::sin(p.shape_rot);
  const double u = (cr * u0 - sr * v0) * p.shape_aspect;
  const double v = sr * u0 + cr * v0;
  double d;
  switch (p.attrs.shape) {
    case 0: d = std::sqrt(u * u + v * v); break;
    case 1: d = std::max(std::abs(u), std::abs(v)); break;
    default: d = 0.75 * (std::abs(u) + std::abs(v)); break;
  }
  return logistic((p.radius - d) / p.edge);
}


double bump(double x, double y, double bx, double by, double sigma) {
  const double dx = x - bx, dy = y - by;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}
// low-frequency structure both sensors see: a smooth field plus one blob
double shared_background(const SceneParams& p, double x, double y) {
  return p.bg_amp * std::sin(p.bg_fx * x + p.bg_phx) * std::sin(p.bg_fy * y + p.bg_phy) +
         p.blob_amp * bump(x, y, p.blob_x, p.blob_y, p.blob_sigma);
}


double visible_scene(const SceneParams& p, double x, double y, int size) {
  const double m = shape_mask(p, x, y);
  double val = 0.15 + p.scene_level + shared_background(p, x, y) + p.illum0 +
               p.illum_x * x / size + p.illum_y * y / size;
  const double u = (x - p.cx) / p.radius, v = (y - p.cy) / p.radius;
  double body = 0.45 + p.scene_level;
  body += 0.35 * (p.attrs.vis_bit == 0 ? u : v);  // class-informative shading
  body += 0.25 * bump(x, y, p.glint_x[0], p.glint_y[0], 1.2);
  body += 0.25 * bump(x, y, p.glint_x[1], p.glint_y[1], 1.2);
  return val * (1.0 - m) + body * m;
}

double infrared_scene(const SceneParams& p, double x, double y, int /*size*/) {
  const double m = shape_mask(p, x, y);
  double val = 0.2 + p.scene_level + 0.8 * shared_background(p, x, y) + p.ir_gain;
  const double u = (x - p.cx) / p.radius, v = (y - p.cy) / p.radius;
  double body = 0.5 + p.scene_level;
  // nuisance texture replacing the visible shading cue
  body += 0.05 * std::sin(p.speckle_freq * x + p.speckle_phase_x) *
          std::sin(p.speckle_freq * y + p.speckle_phase_y);
  body += 0.06 * (std::cos(p.ramp_dir) * u + std::sin(p.ramp_dir) * v);
  // class-informative hot spots
  if (p.attrs.ir_bit == 0) {
    body += 0.50 * bump(x, y, p.cx, p.cy, 2.4);
  } else {
    body += 0.50 * bump(x, y, p.cx - 5.0, p.cy, 2.0);
    body += 0.50 * bump(x, y, p.cx + 5.0, p.cy, 2.0);
  }
  return val * (1.0 - m) + body * m;
}

}  // namespace

PairedSample synth_pair(const SynthSpec& spec, int cls, int index, PairGeometry* geom) {
  spec.validate();
  if (cls < 0 || cls >= spec.classes) throw ValueError("class index out of range");
  Rng master(spec.seed);
  Rng rng = master.fork(static_cast<std::uint64_t>(cls) * 1000003ULL +
                        static_cast<std::uint64_t>(index) * 7919ULL + 17ULL);

  const int size = spec.image_size;
  SceneParams p;
  p.attrs = class_attrs(cls);
  p.cx = size / 2.0 + rng.uniform(-2.0, 2.0);
  p.cy = size / 2.0 + rng.uniform(-2.0, 2.0);
  p.radius = size * 0.28 * (1.0 + rng.uniform(-0.18, 0.18));
  p.scene_level = rng.uniform(-0.08, 0.08);
  p.shape_rot = rng.uniform(-0.26, 0.26);  // ~15 degrees keeps square/diamond distinct
  p.shape_aspect = 1.0 + rng.uniform(-0.2, 0.25);
  p.edge = rng.uniform(0.8, 1.6);
  p.bg_amp = rng.uniform(0.03, 0.10);
  p.bg_fx = rng.uniform(0.15, 0.45);
  p.bg_fy = rng.uniform(0.15, 0.45);
  p.bg_phx = rng.uniform(0.0, 6.283185307179586);
  p.bg_phy = rng.uniform(0.0, 6.283185307179586);
  p.blob_x = rng.uniform(2.0, size - 2.0);
  p.blob_y = rng.uniform(2.0, size - 2.0);
  p.blob_amp = rng.uniform(-0.2, 0.2);
  p.blob_sigma = rng.uniform(1.5, 3.0);
  p.illum0 = rng.uniform(-0.06, 0.06);
  p.illum_x = rng.uniform(-0.12, 0.12);
  p.illum_y = rng.uniform(-0.12, 0.12);
  for (int g = 0; g < 2; ++g) {
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double rad = rng.uniform(0.0, 0.7) * p.radius;
    p.glint_x[g] = p.cx + rad * std::cos(ang);
    p.glint_y[g] = p.cy + rad * std::sin(ang);
  }
  p.tint_g = rng.uniform(-0.05, 0.05);
  p.tint_b = rng.uniform(-0.08, 0.08);
  p.ir_gain = rng.uniform(-0.05, 0.05);
  p.speckle_phase_x = rng.uniform(0.0, 6.283185307179586);
  p.speckle_phase_y = rng.uniform(0.0, 6.283185307179586);
  p.speckle_freq = rng.uniform(1.2, 2.2);
  p.ramp_dir = rng.uniform(0.0, 6.283185307179586);

  const double theta = rng.uniform(-spec.misalign_deg, spec.misalign_deg) * 3.141592653589793 / 180.0;
  const double tx = rng.uniform(-spec.misalign_px, spec.misalign_px);
  const double ty = rng.uniform(-spec.misalign_px, spec.misalign_px);
  if (geom) *geom = PairGeometry{p.cx, p.cy, p.radius, theta, tx, ty};

  PairedSample out;
  out.label = cls;
  {
    std::ostringstream id;
    id << "c" << cls << "_" << index;
    out.pair_id = id.str();
  }
  out.image_vis = TensorT<float>::zeros({3, size, size});
  out.image_ir = TensorT<float>::zeros({3, size, size});
  auto& vv = out.image_vis.values_mut();
  auto& vi = out.image_ir.values_mut();

  const double half = size / 2.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double tint[3] = {1.0, 0.95 + p.tint_g, 0.90 + p.tint_b};
  const double ir_tint[3] = {1.0, 0.85, 0.70};

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double sv = visible_scene(p, x, y, size);
      // the infrared sensor samples the scene through a rigid misalignment
      const double rx = ct * (x - half) - st * (y - half) + half + tx;
      const double ry = st * (x - half) + ct * (y - half) + half + ty;
      const double si = infrared_scene(p, rx, ry, size);
      for (int c = 0; c < 3; ++c) {
        const double nv = sv * tint[c] + spec.noise_vis * rng.normal();
        const double ni = si * ir_tint[c] + spec.noise_ir * rng.normal();
        vv[static_cast<std::size_t>((c * size + y) * size + x)] =
            float(std::min(1.0, std::max(0.0, nv)));
        vi[static_cast<std::size_t>((c * size + y) * size + x)] =
            float(std::min(1.0, std::max(0.0, ni)));
      }
    }
  return out;
}

std::vector<std::string> assign_splits(const std::vector<int>& labels, double train, double test,
                                       double val, std::uint64_t seed) {
  if (std::abs(train + test + val - 1.0) > 1e-9) throw ValueError("split ratios must sum to 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::string> out(labels.size());
  Rng rng(seed ^ 0x5eedULL);
  for (auto& [cls, idx] : by_class) {
    const std::size_t n = idx.size();
    if (n < 3) throw ValueError("class " + std::to_string(cls) + " has fewer than 3 samples, cannot split");
    rng.shuffle(idx);
    std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(val * double(n))));
    std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(test * double(n))));
    if (n_val + n_test >= n) throw ValueError("split ratios leave no training data for class " + std::to_string(cls));
    const std::size_t n_train = n - n_val - n_test;
    for (std::size_t k = 0; k < n; ++k)
      out[idx[k]] = k < n_train ? "train" : (k < n_train + n_test ? "test" : "val");
  }
  return out;
}

void write_manifest(const std::string& dir, const std::vector<ManifestRow>& rows) {
  std::ofstream os(fs::path(dir) / "manifest.csv", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + dir);
  os << "pair_id,label,split,path_vis,path_ir\n";
  for (const auto& r : rows)
    os << r.pair_id << "," << r.label << "," << r.split << "," << r.path_vis << "," << r.path_ir << "\n";
}

std::vector<ManifestRow> read_manifest(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.csv");
  if (!is) throw IoError("cannot open manifest in " + dir);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty manifest in " + dir);
  std::vector<ManifestRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRow r;
    std::string label;
    if (!std::getline(ls, r.pair_id, ',') || !std::getline(ls, label, ',') ||
        !std::getline(ls, r.split, ',') || !std::getline(ls, r.path_vis, ',') ||
        !std::getline(ls, r.path_ir, ','))
      throw IoError("malformed manifest line: " + line);
    r.label = std::stoi(label);
    rows.push_back(std::move(r));
  }
  return rows;
}

void generate_dataset(const SynthSpec& spec, const std::string& dir) {
  spec.validate();
  fs::create_directories(fs::path(dir) / "images");
  std::vector<ManifestRow> rows;
  std::vector<int> labels;
  for (int cls = 0; cls < spec.classes; ++cls)
    for (int i = 0; i < spec.per_class; ++i) {
      auto sample = synth_pair(spec, cls, i);
      ManifestRow r;
      r.pair_id = sample.pair_id;
      r.label = cls;
      r.path_vis = "images/" + sample.pair_id + "_vis.fdt";
      r.path_ir = "images/" + sample.pair_id + "_ir.fdt";
      save_fdt(sample.image_vis, (fs::path(dir) / r.path_vis).string());
      save_fdt(sample.image_ir, (fs::path(dir) / r.path_ir).string());
      rows.push_back(std::move(r));
      labels.push_back(cls);
    }
  auto splits = assign_splits(labels, spec.split_train, spec.split_test, spec.split_val, spec.seed);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].split = splits[i];
  write_manifest(dir, rows);
}

PairLoader::PairLoader(std::string dataset_dir, const std::string& split, int batch_size,
                       std::uint64_t seed)
    : dir_(std::move(dataset_dir)), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ < 1) throw ValueError("batch size must be positive");
  for (auto& r : read_manifest(dir_))
    if (r.split == split) rows_.push_back(std::move(r));
  if (rows_.empty()) throw ValueError("no rows in split '" + split + "' of " + dir_);
  auto probe = load_fdt<float>((fs::path(dir_) / rows_[0].path_vis).string());
  if (probe.rank() != 3 || probe.dim(0) != 3) throw IoError("dataset image is not [3,H,W]: " + rows_[0].path_vis);
  image_size_ = static_cast<int>(probe.dim(1));
}

std::size_t PairLoader::batch_count() const {
  return (rows_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

std::vector<Batch> PairLoader::epoch(int epoch_index) const {
  std::vector<std::size_t> order(rows_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed_ ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch_index + 1)));
  rng.shuffle(order);

  std::vector<Batch> batches;
  const int size = image_size_;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size_)) {
    const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(batch_size_));
    Batch b;
    b.vis = TensorT<float>::zeros({static_cast<std::int64_t>(count), 3, size, size});
    b.ir = TensorT<float>::zeros({static_cast<std::int64_t>(count), 3, size, size});
    const std::size_t plane = static_cast<std::size_t>(3 * size * size);
    for (std::size_t k = 0; k < count; ++k) {
      const auto& row = rows_[order[start + k]];
      auto iv = load_fdt<float>((fs::path(dir_) / row.path_vis).string());
      auto ii = load_fdt<float>((fs::path(dir_) / row.path_ir).string());
      if (iv.numel() != static_cast<std::int64_t>(plane) || ii.numel() != static_cast<std::int64_t>(plane))
        throw IoError("image size mismatch at " + row.path_vis);
      std::copy(iv.values().begin(), iv.values().end(), b.vis.values_mut().begin() + k * plane);
      std::copy(ii.values().begin(), ii.values().end(), b.ir.values_mut().begin() + k * plane);
      b.labels.push_back(row.label);
      b.pair_ids.push_back(row.pair_id);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

double linear_probe_accuracy(const std::vector<std::vector<float>>& train_x, const std::vector<int>& train_y,
                             const std::vector<std::vector<float>>& eval_x, const std::vector<int>& eval_y,
                             int classes, int iters, double lr) {
  if (train_x.empty() || eval_x.empty()) throw ValueError("linear probe needs data");
  const std::size_t dim = train_x[0].size();
  const std::size_t n = train_x.size();
  std::vector<double> w(dim * static_cast<std::size_t>(classes), 0.0);
  std::vector<double> bias(static_cast<std::size_t>(classes), 0.0);
  std::vector<double> logits(static_cast<std::size_t>(classes));
  std::vector<double> gw(w.size()), gb(bias.size());

  for (int it = 0; it < iters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& x = train_x[i];
      for (int c = 0; c < classes; ++c) {
        double s = bias[static_cast<std::size_t>(c)];
        const double* wc = w.data() + static_cast<std::size_t>(c) * dim;
        for (std::size_t j = 0; j < dim; ++j) s += wc[j] * x[j];
        logits[static_cast<std::size_t>(c)] = s;
      }
      double mx = logits[0];
      for (int c = 1; c < classes; ++c) mx = std::max(mx, logits[static_cast<std::size_t>(c)]);
      double z = 0;
      for (int c = 0; c < classes; ++c) z += std::exp(logits[static_cast<std::size_t>(c)] - mx);
      for (int c = 0; c < classes; ++c) {
        const double p = std::exp(logits[static_cast<std::size_t>(c)] - mx) / z;
        const double g = (p - (c == train_y[i] ? 1.0 : 0.0)) / double(n);
        gb[static_cast<std::size_t>(c)] += g;
        double* gwc = gw.data() + static_cast<std::size_t>(c) * dim;
        for (std::size_t j = 0; j < dim; ++j) gwc[j] += g * x[j];
      }
    }
    constexpr double kDecay = 1e-3;
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * (gw[j] + kDecay * w[j]);
    for (std::size_t c = 0; c < bias.size(); ++c) bias[c] -= lr * gb[c];
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_x.size(); ++i) {
    const auto& x = eval_x[i];
    int best = 0;
    double best_s = -1e300;
    for (int c = 0; c < classes; ++c) {
      double s = bias[static_cast<std::size_t>(c)];
      const double* wc = w.data() + static_cast<std::size_t>(c) * dim;
      for (std::size_t j = 0; j < dim; ++j) s += wc[j] * x[j];
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    if (best == eval_y[i]) ++correct;
  }
  return double(correct) / double(eval_x.size());
}

// ---------- 8-bit image import ----------

namespace {

int pnm_next_int(std::istream& is) {
  // skips whitespace and '#' comments
  while (true) {
    int ch = is.peek();
    if (ch == '#') {
      std::string junk;
      std::getline(is, junk);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
  int v;
  if (!(is >> v)) throw IoError("malformed PNM header");
  return v;
}

TensorT<float> gray_or_rgb_to_tensor(const std::vector<unsigned char>& px, int w, int h, int channels) {
  TensorT<float> out = TensorT<float>::zeros({3, h, w});
  auto& v = out.values_mut();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * w + x) * static_cast<std::size_t>(channels);
      for (int c = 0; c < 3; ++c) {
        const unsigned char raw = channels == 1 ? px[base] : px[base + static_cast<std::size_t>(std::min(c, channels - 1))];
        v[static_cast<std::size_t>((c * h + y) * w + x)] = float(raw) / 255.0f;
      }
    }
  return out;
}

TensorT<float> load_pnm(std::ifstream& is, const std::string& path) {
  char p, kind;
  is >> p >> kind;
  const int w = pnm_next_int(is);
  const int h = pnm_next_int(is);
  const int maxval = pnm_next_int(is);
  if (maxval <= 0 || maxval > 255) throw IoError("only 8-bit PNM supported: " + path);
  const int channels = (kind == '3' || kind == '6') ? 3 : 1;
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * channels);
  if (kind == '5' || kind == '6') {
    is.get();  // single whitespace after header
    if (!is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size())))
      throw IoError("truncated PNM payload: " + path);
  } else if (kind == '2' || kind == '3') {
    for (auto& b : px) b = static_cast<unsigned char>(pnm_next_int(is));
  } else {
    throw IoError("unsupported PNM kind in " + path);
  }
  return gray_or_rgb_to_tensor(px, w, h, channels);
}

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

TensorT<float> load_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0) throw IoError("not a PNG file: " + path);

  int w = 0, h = 0, bit_depth = 0, color_type = 0;
  std::vector<unsigned char> idat;
  std::size_t off = 8;
  while (off + 8 <= file.size()) {
    const std::uint32_t len = be32(file.data() + off);
    const std::string type(reinterpret_cast<const char*>(file.data() + off + 4), 4);
    const unsigned char* data = file.data() + off + 8;
    if (off + 12 + len > file.size()) throw IoError("truncated PNG chunk in " + path);
    if (type == "IHDR") {
      w = static_cast<int>(be32(data));
      h = static_cast<int>(be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw IoError("interlaced PNG unsupported: " + path);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    off += 12 + len;
  }
  if (w <= 0 || h <= 0 || bit_depth != 8) throw IoError("only 8-bit PNG supported: " + path);
  int channels;
  switch (color_type) {
    case 0: channels = 1; break;
    case 2: channels = 3; break;
    case 6: channels = 4; break;
    default: throw IoError("unsupported PNG color type in " + path);
  }

  const std::size_t stride = static_cast<std::size_t>(w) * static_cast<std::size_t>(channels);
  std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(h));
  uLongf out_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &out_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      out_len != raw.size())
    throw IoError("PNG inflate failed: " + path);

  // undo per-scanline filters
  std::vector<unsigned char> px(stride * static_cast<std::size_t>(h));
  const int bpp = channels;
  for (int y = 0; y < h; ++y) {
    const unsigned char filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
    const unsigned char* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1;
    unsigned char* dst = px.data() + static_cast<std::size_t>(y) * stride;
    const unsigned char* prev = y > 0 ? px.data() + static_cast<std::size_t>(y - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - static_cast<std::size_t>(bpp)] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - static_cast<std::size_t>(bpp)] : 0;
      int x = src[i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: {
          const int pp = a + b - c;
          const int pa = std::abs(pp - a), pb = std::abs(pp - b), pc = std::abs(pp - c);
          x += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default: throw IoError("unknown PNG filter in " + path);
      }
      dst[i] = static_cast<unsigned char>(x & 0xff);
    }
  }
  return gray_or_rgb_to_tensor(px, w, h, channels);
}

}  // namespace

TensorT<float> load_image_8bit(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  char magic0 = static_cast<char>(is.get());
  if (magic0 == 'P') {
    is.seekg(0);
    return load_pnm(is, path);
  }
  is.close();
  return load_png(path);
}

TensorT<float> resize_image(const TensorT<float>& img, int out_h, int out_w) {
  const std::int64_t h = img.dim(1), w = img.dim(2);
  TensorT<float> out = TensorT<float>::zeros({3, out_h, out_w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const double sy = (y + 0.5) * double(h) / out_h - 0.5;
        const double sx = (x + 0.5) * double(w) / out_w - 0.5;
        const std::int64_t y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(sy)), 0, h - 1);
        const std::int64_t x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(sx)), 0, w - 1);
        const std::int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const double fy = std::clamp(sy - double(y0), 0.0, 1.0);
        const double fx = std::clamp(sx - double(x0), 0.0, 1.0);
        auto at = [&](std::int64_t yy, std::int64_t xx) {
          return double(img.values()[static_cast<std::size_t>((c * h + yy) * w + xx)]);
        };
        const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        out.values_mut()[static_cast<std::size_t>((c * out_h + y) * out_w + x)] = float(v);
      }
  return out;
}

void import_pairs(const std::string& listing_csv, const std::string& out_dir, int image_size,
                  std::uint64_t split_seed) {
  std::ifstream is(listing_csv);
  if (!is) throw IoError("cannot open listing: " + listing_csv);
  fs::create_directories(fs::path(out_dir) / "images");
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty listing: " + listing_csv);
  std::vector<ManifestRow> rows;
  std::vector<int> labels;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, label, pv, pi;
    if (!std::getline(ls, id, ',') || !std::getline(ls, label, ',') || !std::getline(ls, pv, ',') ||
        !std::getline(ls, pi, ','))
      throw IoError("malformed listing line: " + line);
    ManifestRow r;
    r.pair_id = id;
    r.label = std::stoi(label);
    r.path_vis = "images/" + id + "_vis.fdt";
    r.path_ir = "images/" + id + "_ir.fdt";
    save_fdt(resize_image(load_image_8bit(pv), image_size, image_size),
             (fs::path(out_dir) / r.path_vis).string());
    save_fdt(resize_image(load_image_8bit(pi), image_size, image_size),
             (fs::path(out_dir) / r.path_ir).string());
    labels.push_back(r.label);
    rows.push_back(std::move(r));
  }
  auto splits = assign_splits(labels, 0.7, 0.2, 0.1, split_seed);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].split = splits[i];
  write_manifest(out_dir, rows);
}

}  // namespace fdct
