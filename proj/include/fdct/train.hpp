#pragma once

#include <string>
#include <vector>

#include "fdct/config.hpp"
#include "fdct/data_synth.hpp"
#include "fdct/metrics.hpp"
#include "fdct/model.hpp"

namespace fdct {

struct TrainConfig {
  std::string data_dir;
  std::uint64_t seed = 1;
  int epochs = 40;
  int batch_size = 24;
  double lr = 2e-4;
  double weight_decay = 0.05;
  double clip_norm = 5.0;
  bool deterministic = true;
  ModelConfig model;
  LossWeights weights;
  SynthSpec synth;  // generate defaults; also carries classes/image size

  static TrainConfig from_config(const Config& c);
  Config to_config() const;
};

// Decoupled weight-decay Adam over a float parameter registry. Parameter
// order is the registry insertion order, so updates are deterministic.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.05)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(ParamRegistry<float>& params, double lr);

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// lr(0) = base, lr(total) = 0, half-cosine in between.
double cosine_lr(double base, std::int64_t step, std::int64_t total_steps);

// Scales all gradients so the global L2 norm is at most max_norm.
double clip_global_norm(ParamRegistry<float>& params, double max_norm);

struct TrainResult {
  MetricsReport test_metrics;
  std::string run_dir;
  LossBreakdown final_losses;
  double train_seconds = 0;
};

// Trains the fusion model, writes losses.csv / metrics.csv / confusion.csv /
// pr.csv, a checkpoint directory of named FDT tensors, and config.lock.
TrainResult train_fdct(const TrainConfig& cfg, const std::string& out_dir, bool overwrite);

// Evaluates a trained model on one split; also reports single-modality
// diagnostics obtained by zeroing the other modality's pooled embedding.
MetricsReport eval_fdct(const FdctModel<float>& model, const std::string& data_dir, const std::string& split,
                        const std::string& out_dir = "");

// Loads a run directory (config.lock + checkpoint) back into a model.
FdctModel<float> load_run(const std::string& run_dir, TrainConfig* cfg_out = nullptr);

// Single-modality convolutional classifier of comparable desk-scale budget:
// four 3x3 conv blocks (strides 2,2,2,1), global average pooling, linear head.
struct BaselineModel {
  ParamRegistry<float> params;
  std::int64_t classes = 0;
  std::vector<TensorT<float>> conv_w, conv_b;
  TensorT<float> head_w, head_b;
  static BaselineModel create(std::int64_t classes, std::uint64_t seed);
  TensorT<float> forward(const TensorT<float>& images) const;
};

TrainResult train_baseline(const TrainConfig& cfg, Modality modality, const std::string& out_dir,
                           bool overwrite);

struct AblationRow {
  std::string name;
  bool ita = true, scma = true, cpa = true, decomposition = true;
  std::vector<double> seed_accuracies;
  double median_accuracy = 0;
};

// The five configurations (drop one loss each, then full), each trained over
// the given seeds; writes ablation.csv under out_dir.
std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                      const std::string& out_dir, bool overwrite);

double median(std::vector<double> v);

}  // namespace fdct
