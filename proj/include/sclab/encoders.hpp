#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sclab/config.hpp"
#include "sclab/tensor.hpp"
#include "sclab/text.hpp"

namespace sclab::enc {

// One config drives both towers; they share width/depth but keep separate
// parameters. embed_dim is the joint space D, vocab_size is V.
struct EncoderConfig {
  std::size_t depth = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::size_t patch_size = 8;
  std::size_t image_size = 32;
  std::size_t max_seq_len = 16;
  std::size_t embed_dim = 32;
  std::size_t vocab_size = 64;

  std::size_t n_patches() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(mlp_ratio * static_cast<double>(width));
  }
  void validate() const;
  static EncoderConfig from_config(const cfg::KvConfig& config);
  std::string echo() const;
};

// Pre-LN transformer block parameters.
struct Block {
  Tensor ln1_g, ln1_b;
  Tensor q_w, q_b, k_w, k_b, v_w, v_b;
  Tensor out_w, out_b;
  Tensor ln2_g, ln2_b;
  Tensor fc_w, fc_b;
  Tensor pr_w, pr_b;
};

struct Tower {
  Tensor embed_w, embed_b;  // text: token table (V,width), bias unused (empty)
  Tensor pos;               // (P or max_seq_len, width)
  std::vector<Block> blocks;
  Tensor lnf_g, lnf_b;
  Tensor proj;  // (width, D)
};

struct ModelParams {
  EncoderConfig config;
  Tower vision;
  Tower text;
  Tensor head_w;  // (width, V): logits = pooled · head_w + head_b
  Tensor head_b;  // (V)
  Tensor log_tau;   // scalar, stores ln(1/tau)
  Tensor sig_bias;  // scalar, sigmoid-loss variant

  static ModelParams init(const EncoderConfig& config, std::uint64_t seed);

  // Stable name -> tensor enumeration; order is fixed across runs so the
  // optimizer state and checkpoints line up.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> parameters() const;
  void set_requires_grad(bool v);
};

struct ImageEncoding {
  Tensor pooled;  // (B, width) pre-projection mean-pooled feature
  Tensor u;       // (B, D) unit rows
};

// Uniform without-replacement patch drop; returns kept indices, ascending.
std::vector<std::size_t> sample_patch_mask(std::size_t n_patches, double ratio,
                                           std::uint64_t rng_seed);

// pixels: (B, 3, S, S) constant tensor with values in [0,1].
Tensor make_image_batch(const std::vector<const std::vector<double>*>& images,
                        std::size_t image_size);

ImageEncoding encode_image(const Tensor& pixels, const ModelParams& params,
                           double mask_ratio = 0.0, std::uint64_t rng_seed = 0);

// Each sample must end in eos; padding never leaks into the pooled state.
Tensor encode_text(const std::vector<text::TokenIds>& batch,
                   const ModelParams& params);

Tensor classify_head(const Tensor& pooled, const ModelParams& params);

// Checkpoint directory: one tensor blob per parameter plus a manifest with
// the config echo and the parameter -> file map.
void save_checkpoint(const std::string& dir, const ModelParams& params);
ModelParams load_checkpoint(const std::string& dir);

}  // namespace sclab::enc
