#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sclab/config.hpp"
#include "sclab/encoders.hpp"
#include "sclab/objectives.hpp"
#include "sclab/text.hpp"
#include "sclab/worlds.hpp"

namespace sclab::train {

// clip/siglip/flip are the plain variants; the super* forms add the
// IDF-weighted classification loss on the vision trunk.
enum class Objective { kClip, kSuperClip, kSigLip, kSuperSigLip, kFlip, kSuperFlip };

Objective parse_objective(const std::string& name);
std::string objective_name(Objective o);
bool uses_class_loss(Objective o);
bool uses_sigmoid(Objective o);
bool uses_masking(Objective o);

struct TrainConfig {
  Objective objective = Objective::kSuperClip;
  double lambda = 1.0;
  std::size_t batch_size = 32;
  std::size_t steps = 200;
  std::size_t warmup_steps = 20;
  double lr_max = 1e-3;
  double lr_min = 0.0;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double mask_ratio = 0.5;          // flip variants only
  std::string caption_mode = "dual";  // short | long | dual
  // Global-norm clipping, 0 disables (default). A shared norm budget couples
  // the two losses: the larger classification gradients crowd out the
  // contrastive signal, which AdamW's per-parameter scaling otherwise absorbs.
  double grad_clip = 0.0;
  bool use_idf = true;              // off: uniform label distributions
  std::uint64_t seed = 0;
  enc::EncoderConfig encoder;

  void validate() const;
  static TrainConfig from_config(const cfg::KvConfig& config);
};

double cosine_lr(std::size_t t, const TrainConfig& cfg);

// Decoupled AdamW over a fixed parameter list; weight decay applies to
// rank>=2 weight matrices only.
class AdamW {
 public:
  explicit AdamW(const std::vector<Tensor>& params);
  void step(const std::vector<Tensor>& params, double lr, const TrainConfig& cfg);
  std::size_t t() const { return t_; }

 private:
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Applied before the optimizer step; returns the pre-clip global norm.
double clip_gradients(const std::vector<Tensor>& params, double max_norm);

// One epoch of seeded-shuffle index batches; the trailing partial batch is
// dropped so every step sees a full batch.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n_samples,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed,
                                                   std::size_t epoch);

// caption routing per mode: short->(short,short), long->(long,long),
// dual->(short for contrastive, long for classification)
struct RoutedCaptions {
  std::string contrastive;
  std::string classification;
};
RoutedCaptions route_captions(const worlds::Sample& s, const std::string& mode);

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  double l_clip = 0.0;
  double l_class = 0.0;
  double l_total = 0.0;
};

struct TrainResult {
  enc::ModelParams params;
  std::vector<StepMetrics> metrics;
  text::Vocabulary vocab;
  text::IdfTable idf;
};

TrainResult run_training(const TrainConfig& cfg, const worlds::Dataset& dataset);

void write_metrics_csv(std::ostream& out, const std::vector<StepMetrics>& metrics);

}  // namespace sclab::train
