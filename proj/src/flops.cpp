#include "sclab/flops.hpp"

#include <iomanip>
#include <ostream>

namespace sclab::flops {

namespace {
constexpr double kGiga = 1e9;
}

std::string convention_name(Convention c) {
  return c == Convention::kMac ? "MAC" : "FLOP";
}

double flops_linear(std::size_t in_dim, std::size_t out_dim, Convention conv) {
  check(in_dim >= 1 && out_dim >= 1, "flops_linear: dims must be >= 1");
  return per_mac(conv) * static_cast<double>(in_dim) * static_cast<double>(out_dim);
}

double flops_classification_loss(std::uint64_t batch, std::uint64_t classes) {
  check(batch >= 1 && classes >= 1, "flops_classification_loss: B,C >= 1");
  return 7.0 * static_cast<double>(batch) * static_cast<double>(classes);
}

double flops_classification_loss_exact(std::uint64_t batch, std::uint64_t classes) {
  check(batch >= 1 && classes >= 1, "flops_classification_loss: B,C >= 1");
  const double b = static_cast<double>(batch), c = static_cast<double>(classes);
  return 5.0 * b * c + b * c + b * (c - 1.0);
}

double flops_contrastive_loss(std::uint64_t batch, std::uint64_t embed_dim) {
  check(batch >= 1 && embed_dim >= 1, "flops_contrastive_loss: B,D >= 1");
  const double b = static_cast<double>(batch);
  return 2.0 * b * b * static_cast<double>(embed_dim);
}

TowerCost flops_transformer_encoder(const TowerDims& dims, Convention conv) {
  check(dims.depth >= 1 && dims.width >= 1 && dims.seq_len >= 1,
        "flops_transformer_encoder: invalid tower dims");
  const double u = per_mac(conv);
  const double s = static_cast<double>(dims.seq_len);
  const double d = static_cast<double>(dims.width);
  const double L = static_cast<double>(dims.depth);
  const double hidden = dims.mlp_ratio * d;

  TowerCost cost;
  if (dims.patch_dim > 0)
    cost.embed = u * s * static_cast<double>(dims.patch_dim) * d;
  cost.projections = u * L * 4.0 * s * d * d;  // qkv (3d) + output (d)
  cost.attention = u * L * 2.0 * s * s * d;
  cost.mlp = u * L * 2.0 * s * d * hidden;
  if (dims.proj_dim > 0)
    cost.head_proj = u * d * static_cast<double>(dims.proj_dim);
  return cost;
}

ModelDims model_b() {
  ModelDims m;
  m.name = "B";
  m.vision = {12, 768, 4.0, 197, 3 * 16 * 16, 512};
  m.text = {12, 512, 4.0, 77, 0, 512};
  m.head_in = 768;
  m.vocab = 49408;
  m.embed_dim = 512;
  return m;
}

ModelDims model_l() {
  ModelDims m;
  m.name = "L";
  m.vision = {24, 1024, 4.0, 197, 3 * 16 * 16, 768};
  m.text = {12, 768, 4.0, 77, 0, 768};
  m.head_in = 1024;
  m.vocab = 49408;
  m.embed_dim = 768;
  return m;
}

double FlopsReport::head_share() const {
  const double total =
      vision.fvcore_total() + text.fvcore_total() + linear_head;
  return total == 0.0 ? 0.0 : linear_head / total;
}

double FlopsReport::class_to_contrastive() const {
  return contrastive_loss == 0.0 ? 0.0 : classification_loss / contrastive_loss;
}

FlopsReport report(const ModelDims& dims, std::uint64_t batch) {
  FlopsReport r;
  r.dims = dims;
  r.batch = batch;
  r.vision = flops_transformer_encoder(dims.vision, Convention::kMac);
  r.text = flops_transformer_encoder(dims.text, Convention::kMac);
  r.linear_head = dims.head_in == 0
                      ? 0.0
                      : flops_linear(dims.head_in, dims.vocab, Convention::kMac);
  r.contrastive_loss = flops_contrastive_loss(batch, dims.embed_dim);
  r.classification_loss = flops_classification_loss(batch, dims.vocab);
  return r;
}

void write_report_text(std::ostream& out, const FlopsReport& r) {
  auto g = [](double v) { return v / kGiga; };
  out << std::fixed << std::setprecision(3);
  out << "FLOPs report (model " << r.dims.name << ", B=" << r.batch
      << ", C=" << r.dims.vocab << ", D=" << r.dims.embed_dim << ")\n";
  out << "  component costs are fvcore-style G-MACs; attention score/value\n"
         "  matmuls are listed separately (fvcore does not trace them)\n";
  out << "  vision encoder        " << std::setw(10) << g(r.vision.fvcore_total())
      << "  [MAC]  (+ attention matmuls " << g(r.vision.attention) << ")\n";
  out << "  text encoder          " << std::setw(10) << g(r.text.fvcore_total())
      << "  [MAC]  (+ attention matmuls " << g(r.text.attention) << ")\n";
  out << "  linear head           " << std::setw(10) << g(r.linear_head)
      << "  [MAC]\n";
  out << "  contrastive loss      " << std::setw(10) << g(r.contrastive_loss)
      << "  [FLOP]  (2*B^2*D)\n";
  out << "  classification loss   " << std::setw(10) << g(r.classification_loss)
      << "  [FLOP]  (7*B*C)\n";
  out << std::setprecision(4);
  out << "  head share of model   " << 100.0 * r.head_share() << " %\n";
  out << "  class/contrastive     " << 100.0 * r.class_to_contrastive() << " %\n";
}

void write_report_csv(std::ostream& out, const FlopsReport& r) {
  out << "component,giga_units,convention\n";
  out << std::setprecision(12);
  out << "vision_encoder," << r.vision.fvcore_total() / kGiga << ",MAC\n";
  out << "vision_attention_matmuls," << r.vision.attention / kGiga << ",MAC\n";
  out << "text_encoder," << r.text.fvcore_total() / kGiga << ",MAC\n";
  out << "text_attention_matmuls," << r.text.attention / kGiga << ",MAC\n";
  out << "linear_head," << r.linear_head / kGiga << ",MAC\n";
  out << "contrastive_loss," << r.contrastive_loss / kGiga << ",FLOP\n";
  out << "classification_loss," << r.classification_loss / kGiga << ",FLOP\n";
  out << "head_share_pct," << 100.0 * r.head_share() << ",ratio\n";
  out << "class_to_contrastive_pct," << 100.0 * r.class_to_contrastive()
      << ",ratio\n";
}

}  // namespace sclab::flops
