#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "sclab/common.hpp"

namespace sclab::flops {

// The literature mixes two conventions: fvcore-style counters report one
// unit per multiply-accumulate, loss-cost estimates count two FLOPs per
// MAC. Reports label every number with its convention.
enum class Convention { kMac, kFlop };

inline double per_mac(Convention c) { return c == Convention::kMac ? 1.0 : 2.0; }
std::string convention_name(Convention c);

struct TowerDims {
  std::size_t depth = 0;
  std::size_t width = 0;
  double mlp_ratio = 4.0;
  std::size_t seq_len = 0;
  std::size_t patch_dim = 0;  // 0 for text towers (lookup embedding)
  std::size_t proj_dim = 0;   // final projection to the shared space
};

struct TowerCost {
  double embed = 0;        // patch projection (vision) or 0 (text lookup)
  double projections = 0;  // qkv + attention output, all layers
  double attention = 0;    // score + value matmuls; fvcore does not trace these
  double mlp = 0;
  double head_proj = 0;    // final projection to the shared embedding
  // fvcore-comparable total: everything except the attention matmuls.
  double fvcore_total() const { return embed + projections + mlp + head_proj; }
  double full_total() const { return fvcore_total() + attention; }
};

// Linear layer cost; bias ignored, matching the paper's rounding.
double flops_linear(std::size_t in_dim, std::size_t out_dim, Convention conv);

// Classification loss, 7*B*C approximation (5BC log_softmax + BC multiply
// + B(C-1) sum). True FLOPs, not MACs.
double flops_classification_loss(std::uint64_t batch, std::uint64_t classes);
double flops_classification_loss_exact(std::uint64_t batch, std::uint64_t classes);

// Contrastive loss similarity matmul, 2*B^2*D FLOPs.
double flops_contrastive_loss(std::uint64_t batch, std::uint64_t embed_dim);

TowerCost flops_transformer_encoder(const TowerDims& dims, Convention conv);

struct ModelDims {
  std::string name;
  TowerDims vision;
  TowerDims text;
  std::size_t head_in = 0;  // pooled feature width feeding the linear head
  std::size_t vocab = 0;    // C
  std::size_t embed_dim = 0;  // D
};

// Presets matching CLIP ViT-B/16 and ViT-L/16 towers at 224x224.
ModelDims model_b();
ModelDims model_l();

struct FlopsReport {
  ModelDims dims;
  std::uint64_t batch = 0;
  TowerCost vision;        // MACs (fvcore convention)
  TowerCost text;          // MACs
  double linear_head = 0;  // MACs
  double contrastive_loss = 0;  // FLOPs
  double classification_loss = 0;  // FLOPs
  double head_share() const;           // head / (vision + text + head)
  double class_to_contrastive() const; // classification / contrastive
};

FlopsReport report(const ModelDims& dims, std::uint64_t batch);

void write_report_text(std::ostream& out, const FlopsReport& r);
void write_report_csv(std::ostream& out, const FlopsReport& r);

}  // namespace sclab::flops
