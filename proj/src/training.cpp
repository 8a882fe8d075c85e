#include "sclab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace sclab::train {

using namespace sclab::op;

Objective parse_objective(const std::string& name) {
  if (name == "clip") return Objective::kClip;
  if (name == "superclip") return Objective::kSuperClip;
  if (name == "siglip") return Objective::kSigLip;
  if (name == "supersiglip") return Objective::kSuperSigLip;
  if (name == "flip") return Objective::kFlip;
  if (name == "superflip") return Objective::kSuperFlip;
  throw ParseError("unknown objective '" + name + "'");
}

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::kClip: return "clip";
    case Objective::kSuperClip: return "superclip";
    case Objective::kSigLip: return "siglip";
    case Objective::kSuperSigLip: return "supersiglip";
    case Objective::kFlip: return "flip";
    case Objective::kSuperFlip: return "superflip";
  }
  throw ContractError("objective_name: bad enum");
}

bool uses_class_loss(Objective o) {
  return o == Objective::kSuperClip || o == Objective::kSuperSigLip ||
         o == Objective::kSuperFlip;
}

bool uses_sigmoid(Objective o) {
  return o == Objective::kSigLip || o == Objective::kSuperSigLip;
}

bool uses_masking(Objective o) {
  return o == Objective::kFlip || o == Objective::kSuperFlip;
}

void TrainConfig::validate() const {
  if (lambda < 0.0 || !std::isfinite(lambda))
    throw DomainError("train config: lambda must be finite and >= 0");
  check(batch_size >= 1, "train config: batch_size must be >= 1");
  check(steps >= 1, "train config: steps must be >= 1");
  check(warmup_steps <= steps, "train config: warmup_steps exceeds steps");
  check(lr_max > 0.0 && lr_min >= 0.0 && lr_min <= lr_max,
        "train config: need 0 <= lr_min <= lr_max, lr_max > 0");
  check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
        "train config: betas must lie in [0,1)");
  check(eps > 0.0, "train config: eps must be positive");
  check(weight_decay >= 0.0, "train config: weight_decay must be >= 0");
  check(mask_ratio >= 0.0 && mask_ratio < 1.0, "train config: mask_ratio in [0,1)");
  check(grad_clip >= 0.0, "train config: grad_clip must be >= 0");
  check(caption_mode == "short" || caption_mode == "long" || caption_mode == "dual",
        "train config: caption_mode must be short|long|dual");
  encoder.validate();
}

TrainConfig TrainConfig::from_config(const cfg::KvConfig& config) {
  TrainConfig c;
  c.objective =
      parse_objective(config.get_string("objective", objective_name(c.objective)));
  c.lambda = config.get_double("lambda", c.lambda);
  c.batch_size = config.get_uint("batch_size", c.batch_size);
  c.steps = config.get_uint("steps", c.steps);
  c.warmup_steps = config.get_uint("warmup_steps", c.warmup_steps);
  c.lr_max = config.get_double("lr_max", c.lr_max);
  c.lr_min = config.get_double("lr_min", c.lr_min);
  c.weight_decay = config.get_double("weight_decay", c.weight_decay);
  c.beta1 = config.get_double("beta1", c.beta1);
  c.beta2 = config.get_double("beta2", c.beta2);
  c.eps = config.get_double("eps", c.eps);
  c.mask_ratio = config.get_double("mask_ratio", c.mask_ratio);
  c.caption_mode = config.get_string("caption_mode", c.caption_mode);
  c.grad_clip = config.get_double("grad_clip", c.grad_clip);
  c.use_idf = config.get_bool("use_idf", c.use_idf);
  c.seed = config.get_uint("seed", c.seed);
  c.encoder = enc::EncoderConfig::from_config(config);
  c.validate();
  return c;
}

double cosine_lr(std::size_t t, const TrainConfig& cfg) {
  check(t <= cfg.steps, "cosine_lr: step " + std::to_string(t) +
                            " beyond schedule end " + std::to_string(cfg.steps));
  if (t <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return cfg.lr_max;
    return cfg.lr_max * static_cast<double>(t) / static_cast<double>(cfg.warmup_steps);
  }
  const double progress = static_cast<double>(t - cfg.warmup_steps) /
                          static_cast<double>(cfg.steps - cfg.warmup_steps);
  return cfg.lr_min +
         0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(const std::vector<Tensor>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(const std::vector<Tensor>& params, double lr,
                 const TrainConfig& cfg) {
  check(params.size() == m_.size(), "adamw: parameter list changed size");
  check(lr >= 0.0, "adamw: negative learning rate");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    check(p.size() == m_[pi].size(), "adamw: parameter shape changed");
    // parameters outside this step's graph stay untouched (no decay either)
    if (!p.has_grad()) continue;
    const bool decay = p.rank() >= 2;  // matrices only; norms/biases/scalars exempt
    const std::vector<double>& grad = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g))
        throw DomainError("adamw: non-finite gradient (training divergence)");
      m_[pi][i] = cfg.beta1 * m_[pi][i] + (1.0 - cfg.beta1) * g;
      v_[pi][i] = cfg.beta2 * v_[pi][i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m_[pi][i] / bc1;
      const double vhat = v_[pi][i] / bc2;
      double update = mhat / (std::sqrt(vhat) + cfg.eps);
      if (decay) update += cfg.weight_decay * p.data()[i];
      p.data()[i] -= lr * update;
    }
  }
}

double clip_gradients(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      double* g = p.node()->grad_acc();
      for (std::size_t i = 0; i < p.size(); ++i) g[i] *= s;
    }
  }
  return norm;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n_samples,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed,
                                                   std::size_t epoch) {
  check(batch_size >= 1, "make_batches: batch_size must be >= 1");
  check(batch_size <= n_samples,
        "make_batches: batch_size exceeds dataset size");
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, "training/epoch/" + std::to_string(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i + batch_size <= n_samples; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(i + batch_size));
  return batches;
}

RoutedCaptions route_captions(const worlds::Sample& s, const std::string& mode) {
  if (mode == "short") return {s.short_caption, s.short_caption};
  if (mode == "long") return {s.long_caption, s.long_caption};
  if (mode == "dual") return {s.short_caption, s.long_caption};
  throw ContractError("route_captions: unknown caption_mode '" + mode + "'");
}

TrainResult run_training(const TrainConfig& cfg, const worlds::Dataset& dataset) {
  cfg.validate();
  check(!dataset.samples.empty(), "run_training: empty dataset");
  check(dataset.image_size == cfg.encoder.image_size,
        "run_training: dataset image size does not match encoder config");

  // vocabulary covers both caption routes; IDF is fit on the classification
  // route only (the captions the head is trained against)
  std::vector<std::string> all_captions, class_captions;
  for (const auto& s : dataset.samples) {
    const RoutedCaptions r = route_captions(s, cfg.caption_mode);
    all_captions.push_back(r.contrastive);
    all_captions.push_back(r.classification);
    class_captions.push_back(r.classification);
  }

  TrainResult result;
  result.vocab = text::build_vocab(all_captions, cfg.encoder.vocab_size);
  const text::DfTable df = text::document_frequency(class_captions, result.vocab);
  if (cfg.use_idf) {
    result.idf = text::idf_weights(df);
  } else {
    // equal weight for every token: label distributions become uniform over
    // each caption's active set
    result.idf.corpus_size = df.corpus_size;
    for (const auto& [id, n] : df.df) result.idf.w[id] = 1.0;
  }

  result.params = enc::ModelParams::init(cfg.encoder, cfg.seed);
  const std::vector<Tensor> params = result.params.parameters();
  AdamW opt(params);

  const std::size_t per_epoch =
      dataset.samples.size() / cfg.batch_size;  // full batches per epoch
  check(per_epoch >= 1, "run_training: batch_size exceeds dataset size");

  std::vector<std::vector<std::size_t>> batches;
  std::size_t epoch = 0;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const std::size_t pos = (step - 1) % per_epoch;
    if (pos == 0) {
      epoch = (step - 1) / per_epoch;
      batches = make_batches(dataset.samples.size(), cfg.batch_size, cfg.seed, epoch);
    }
    const std::vector<std::size_t>& batch = batches[pos];

    // assemble the batch
    std::vector<const std::vector<double>*> images;
    std::vector<text::TokenIds> contrastive_tokens;
    std::vector<text::LabelDistribution> targets;
    for (std::size_t idx : batch) {
      const worlds::Sample& s = dataset.samples[idx];
      const RoutedCaptions r = route_captions(s, cfg.caption_mode);
      images.push_back(&s.image);
      contrastive_tokens.push_back(
          text::tokenize(r.contrastive, result.vocab, cfg.encoder.max_seq_len));
      if (uses_class_loss(cfg.objective)) {
        const text::TokenIds class_tokens =
            text::tokenize(r.classification, result.vocab, cfg.encoder.max_seq_len);
        targets.push_back(
            text::label_distribution(text::khot(class_tokens, result.vocab), result.idf));
      }
    }

    const double ratio = uses_masking(cfg.objective) ? cfg.mask_ratio : 0.0;
    const std::uint64_t mask_seed = derive_seed(cfg.seed, "training/mask") + step;

    const Tensor pixels = enc::make_image_batch(images, cfg.encoder.image_size);
    const enc::ImageEncoding img = enc::encode_image(pixels, result.params, ratio, mask_seed);
    const Tensor v = enc::encode_text(contrastive_tokens, result.params);
    const obj::BatchSimilarity sim =
        obj::similarity_matrix(img.u, v, result.params.log_tau);

    const Tensor l_clip = uses_sigmoid(cfg.objective)
                              ? obj::sigmoid_loss(sim, result.params.sig_bias)
                              : obj::clip_loss(sim);
    const Tensor l_class =
        uses_class_loss(cfg.objective)
            ? obj::class_loss(enc::classify_head(img.pooled, result.params), targets)
            : Tensor::scalar(0.0);
    const double lambda = uses_class_loss(cfg.objective) ? cfg.lambda : 0.0;
    const Tensor l_total = obj::total_loss(l_clip, l_class, lambda);

    if (!std::isfinite(l_total.item()))
      throw DomainError("training diverged at step " + std::to_string(step));

    for (Tensor p : params) p.zero_grad();
    backprop(l_total);
    clip_gradients(params, cfg.grad_clip);
    const double lr = cosine_lr(step, cfg);
    opt.step(params, lr, cfg);

    // CLIP-style temperature guard: tau never drops below 1/100
    result.params.log_tau.data()[0] =
        std::min(result.params.log_tau.data()[0], std::log(100.0));

    StepMetrics m;
    m.step = step;
    m.lr = lr;
    m.l_clip = l_clip.item();
    m.l_class = l_class.item();
    m.l_total = l_total.item();
    result.metrics.push_back(m);
  }
  return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<StepMetrics>& metrics) {
  out.precision(17);
  out << "step,lr,l_clip,l_class,l_total\n";
  for (const auto& m : metrics)
    out << m.step << ',' << m.lr << ',' << m.l_clip << ',' << m.l_class << ','
        << m.l_total << '\n';
}

}  // namespace sclab::train
