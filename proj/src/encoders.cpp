#include "sclab/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sclab::enc {

namespace fs = std::filesystem;
using namespace sclab::op;

void EncoderConfig::validate() const {
  check(depth >= 1 && width >= 1 && heads >= 1, "encoder config: zero dimension");
  check(width % heads == 0, "encoder config: width not divisible by heads");
  check(patch_size >= 1 && image_size % patch_size == 0,
        "encoder config: image_size not divisible by patch_size");
  check(mlp_ratio > 0.0 && mlp_hidden() >= 1, "encoder config: bad mlp_ratio");
  check(max_seq_len >= 3, "encoder config: max_seq_len must fit bos+word+eos");
  check(embed_dim >= 1, "encoder config: embed_dim must be positive");
  check(vocab_size >= 4, "encoder config: vocab_size must cover specials");
}

EncoderConfig EncoderConfig::from_config(const cfg::KvConfig& config) {
  EncoderConfig c;
  c.depth = config.get_uint("depth", c.depth);
  c.width = config.get_uint("width", c.width);
  c.heads = config.get_uint("heads", c.heads);
  c.mlp_ratio = config.get_double("mlp_ratio", c.mlp_ratio);
  c.patch_size = config.get_uint("patch_size", c.patch_size);
  c.image_size = config.get_uint("image_size", c.image_size);
  c.max_seq_len = config.get_uint("max_seq_len", c.max_seq_len);
  c.embed_dim = config.get_uint("embed_dim", c.embed_dim);
  c.vocab_size = config.get_uint("vocab_size", c.vocab_size);
  c.validate();
  return c;
}

std::string EncoderConfig::echo() const {
  std::stringstream ss;
  ss << "depth = " << depth << "\n"
     << "width = " << width << "\n"
     << "heads = " << heads << "\n"
     << "mlp_ratio = " << mlp_ratio << "\n"
     << "patch_size = " << patch_size << "\n"
     << "image_size = " << image_size << "\n"
     << "max_seq_len = " << max_seq_len << "\n"
     << "embed_dim = " << embed_dim << "\n"
     << "vocab_size = " << vocab_size << "\n";
  return ss.str();
}

namespace {

constexpr double kInitStd = 0.02;

Tensor weight(Shape shape, std::mt19937_64& rng) {
  return Tensor::randn(std::move(shape), rng, kInitStd).set_requires_grad(true);
}

Tensor zeros_p(Shape shape) {
  return Tensor::zeros(std::move(shape)).set_requires_grad(true);
}

Tensor ones_p(Shape shape) {
  return Tensor::full(std::move(shape), 1.0).set_requires_grad(true);
}

Block init_block(std::size_t width, std::size_t hidden, std::mt19937_64& rng) {
  Block b;
  b.ln1_g = ones_p({width});
  b.ln1_b = zeros_p({width});
  b.q_w = weight({width, width}, rng);
  b.q_b = zeros_p({width});
  b.k_w = weight({width, width}, rng);
  b.k_b = zeros_p({width});
  b.v_w = weight({width, width}, rng);
  b.v_b = zeros_p({width});
  b.out_w = weight({width, width}, rng);
  b.out_b = zeros_p({width});
  b.ln2_g = ones_p({width});
  b.ln2_b = zeros_p({width});
  b.fc_w = weight({width, hidden}, rng);
  b.fc_b = zeros_p({hidden});
  b.pr_w = weight({hidden, width}, rng);
  b.pr_b = zeros_p({width});
  return b;
}

// One transformer block, pre-LN residual form.
Tensor run_block(const Tensor& x, const Block& b, std::size_t heads,
                 const std::vector<std::size_t>& lens) {
  Tensor h = layer_norm(x, b.ln1_g, b.ln1_b);
  Tensor q = add_bias(matmul(h, b.q_w), b.q_b);
  Tensor k = add_bias(matmul(h, b.k_w), b.k_b);
  Tensor v = add_bias(matmul(h, b.v_w), b.v_b);
  Tensor attn = add_bias(matmul(attention(q, k, v, heads, lens), b.out_w), b.out_b);
  Tensor y = add(x, attn);
  Tensor m = layer_norm(y, b.ln2_g, b.ln2_b);
  m = add_bias(matmul(gelu(add_bias(matmul(m, b.fc_w), b.fc_b)), b.pr_w), b.pr_b);
  return add(y, m);
}

}  // namespace

ModelParams ModelParams::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;

  auto vrng = make_rng(seed, "encoders/vision");
  p.vision.embed_w = weight({config.patch_dim(), config.width}, vrng);
  p.vision.embed_b = zeros_p({config.width});
  p.vision.pos = weight({config.n_patches(), config.width}, vrng);
  for (std::size_t i = 0; i < config.depth; ++i)
    p.vision.blocks.push_back(init_block(config.width, config.mlp_hidden(), vrng));
  p.vision.lnf_g = ones_p({config.width});
  p.vision.lnf_b = zeros_p({config.width});
  p.vision.proj = weight({config.width, config.embed_dim}, vrng);

  auto trng = make_rng(seed, "encoders/text");
  p.text.embed_w = weight({config.vocab_size, config.width}, trng);
  p.text.pos = weight({config.max_seq_len, config.width}, trng);
  for (std::size_t i = 0; i < config.depth; ++i)
    p.text.blocks.push_back(init_block(config.width, config.mlp_hidden(), trng));
  p.text.lnf_g = ones_p({config.width});
  p.text.lnf_b = zeros_p({config.width});
  p.text.proj = weight({config.width, config.embed_dim}, trng);

  auto hrng = make_rng(seed, "encoders/head");
  p.head_w = weight({config.width, config.vocab_size}, hrng);
  p.head_b = zeros_p({config.vocab_size});
  p.log_tau = Tensor::scalar(std::log(1.0 / 0.07)).set_requires_grad(true);
  p.sig_bias = Tensor::scalar(0.0).set_requires_grad(true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto tower = [&out](const std::string& prefix, const Tower& t) {
    out.emplace_back(prefix + ".embed_w", t.embed_w);
    if (t.embed_b.defined()) out.emplace_back(prefix + ".embed_b", t.embed_b);
    out.emplace_back(prefix + ".pos", t.pos);
    for (std::size_t i = 0; i < t.blocks.size(); ++i) {
      const Block& b = t.blocks[i];
      const std::string bp = prefix + ".block" + std::to_string(i);
      out.emplace_back(bp + ".ln1_g", b.ln1_g);
      out.emplace_back(bp + ".ln1_b", b.ln1_b);
      out.emplace_back(bp + ".q_w", b.q_w);
      out.emplace_back(bp + ".q_b", b.q_b);
      out.emplace_back(bp + ".k_w", b.k_w);
      out.emplace_back(bp + ".k_b", b.k_b);
      out.emplace_back(bp + ".v_w", b.v_w);
      out.emplace_back(bp + ".v_b", b.v_b);
      out.emplace_back(bp + ".out_w", b.out_w);
      out.emplace_back(bp + ".out_b", b.out_b);
      out.emplace_back(bp + ".ln2_g", b.ln2_g);
      out.emplace_back(bp + ".ln2_b", b.ln2_b);
      out.emplace_back(bp + ".fc_w", b.fc_w);
      out.emplace_back(bp + ".fc_b", b.fc_b);
      out.emplace_back(bp + ".pr_w", b.pr_w);
      out.emplace_back(bp + ".pr_b", b.pr_b);
    }
    out.emplace_back(prefix + ".lnf_g", t.lnf_g);
    out.emplace_back(prefix + ".lnf_b", t.lnf_b);
    out.emplace_back(prefix + ".proj", t.proj);
  };
  tower("vision", vision);
  tower("text", text);
  out.emplace_back("head_w", head_w);
  out.emplace_back("head_b", head_b);
  out.emplace_back("log_tau", log_tau);
  out.emplace_back("sig_bias", sig_bias);
  return out;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void ModelParams::set_requires_grad(bool v) {
  for (auto& [name, t] : named()) t.set_requires_grad(v);
}

std::vector<std::size_t> sample_patch_mask(std::size_t n_patches, double ratio,
                                           std::uint64_t rng_seed) {
  check(ratio >= 0.0 && ratio < 1.0, "patch mask: ratio must be in [0,1)");
  check(n_patches >= 1, "patch mask: no patches");
  const std::size_t dropped =
      static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n_patches)));
  check(dropped < n_patches, "patch mask: all patches masked");
  std::vector<std::size_t> idx(n_patches);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(rng_seed, "encoders/patch_mask");
  // partial Fisher-Yates: first `dropped` entries become the dropped set
  for (std::size_t i = 0; i < dropped; ++i) {
    const std::size_t j =
        std::uniform_int_distribution<std::size_t>(i, n_patches - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::size_t> kept(idx.begin() + static_cast<std::ptrdiff_t>(dropped),
                                idx.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

Tensor make_image_batch(const std::vector<const std::vector<double>*>& images,
                        std::size_t image_size) {
  check(!images.empty(), "image batch: empty");
  const std::size_t per = 3 * image_size * image_size;
  std::vector<double> data;
  data.reserve(images.size() * per);
  for (const auto* img : images) {
    check(img->size() == per, "image batch: pixel count mismatch");
    data.insert(data.end(), img->begin(), img->end());
  }
  return Tensor::from({images.size(), 3, image_size, image_size}, std::move(data));
}

ImageEncoding encode_image(const Tensor& pixels, const ModelParams& params,
                           double mask_ratio, std::uint64_t rng_seed) {
  const EncoderConfig& c = params.config;
  check(pixels.rank() == 4, "encode_image: pixels must be (B,3,S,S)");
  const std::size_t B = pixels.shape()[0];
  const std::size_t S = c.image_size;
  check(pixels.shape()[1] == 3 && pixels.shape()[2] == S && pixels.shape()[3] == S,
        "encode_image: pixel shape does not match config image_size");

  const std::vector<std::size_t> kept =
      sample_patch_mask(c.n_patches(), mask_ratio, rng_seed);
  const std::size_t n = kept.size();
  const std::size_t ps = c.patch_size;
  const std::size_t grid = S / ps;

  // Patch extraction is a constant rearrangement of the input pixels.
  std::vector<double> patches(B * n * c.patch_dim());
  const auto& px = pixels.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t py = kept[t] / grid;
      const std::size_t px0 = kept[t] % grid;
      double* dst = &patches[(b * n + t) * c.patch_dim()];
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            *dst++ = px[((b * 3 + ch) * S + py * ps + y) * S + px0 * ps + x];
    }

  Tensor x = add_bias(
      matmul(Tensor::from({B, n, c.patch_dim()}, std::move(patches)),
             params.vision.embed_w),
      params.vision.embed_b);

  // positional rows gathered for the surviving patches only
  std::vector<std::size_t> pos_ids;
  pos_ids.reserve(B * n);
  for (std::size_t b = 0; b < B; ++b)
    pos_ids.insert(pos_ids.end(), kept.begin(), kept.end());
  x = add(x, embedding(params.vision.pos, pos_ids, {B, n}));

  for (const Block& blk : params.vision.blocks)
    x = run_block(x, blk, c.heads, {});
  x = layer_norm(x, params.vision.lnf_g, params.vision.lnf_b);

  ImageEncoding out;
  out.pooled = mean_axis(x, 1);
  out.u = l2_normalize(matmul(out.pooled, params.vision.proj));
  return out;
}

Tensor encode_text(const std::vector<text::TokenIds>& batch,
                   const ModelParams& params) {
  const EncoderConfig& c = params.config;
  check(!batch.empty(), "encode_text: empty batch");
  const std::size_t B = batch.size();
  std::size_t max_len = 0;
  for (const auto& t : batch) {
    check(!t.ids.empty() && t.ids.back() == text::Vocabulary::kEos,
          "encode_text: sequence missing eos terminator");
    check(t.ids.size() <= c.max_seq_len, "encode_text: sequence exceeds max_seq_len");
    for (std::size_t id : t.ids)
      check(id < c.vocab_size, "encode_text: token id out of vocab range");
    max_len = std::max(max_len, t.ids.size());
  }

  std::vector<std::size_t> ids(B * max_len, text::Vocabulary::kPad);
  std::vector<std::size_t> pos_ids(B * max_len);
  std::vector<std::size_t> lens(B), eos_pos(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& seq = batch[b].ids;
    std::copy(seq.begin(), seq.end(), ids.begin() + static_cast<std::ptrdiff_t>(b * max_len));
    for (std::size_t i = 0; i < max_len; ++i) pos_ids[b * max_len + i] = i;
    lens[b] = seq.size();
    eos_pos[b] = seq.size() - 1;
  }

  Tensor x = add(embedding(params.text.embed_w, ids, {B, max_len}),
                 embedding(params.text.pos, pos_ids, {B, max_len}));
  for (const Block& blk : params.text.blocks)
    x = run_block(x, blk, c.heads, lens);
  x = layer_norm(x, params.text.lnf_g, params.text.lnf_b);
  Tensor pooled = select_positions(x, eos_pos);
  return l2_normalize(matmul(pooled, params.text.proj));
}

Tensor classify_head(const Tensor& pooled, const ModelParams& params) {
  check(pooled.rank() == 2 && pooled.shape()[1] == params.config.width,
        "classify_head: pooled width mismatch");
  return add_bias(matmul(pooled, params.head_w), params.head_b);
}

void save_checkpoint(const std::string& dir, const ModelParams& params) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "checkpoint.manifest");
  if (!manifest) throw IoError("cannot write checkpoint manifest in " + dir);
  manifest << "format: sclab-checkpoint-v1\n";
  manifest << "config:\n";
  std::stringstream echo(params.config.echo());
  std::string line;
  while (std::getline(echo, line)) manifest << "  " << line << "\n";
  manifest << "tensors:\n";
  for (const auto& [name, t] : params.named()) {
    const std::string file = name + ".tnsr";
    save_tensor_file((fs::path(dir) / file).string(), t);
    manifest << "  " << name << " = " << file << "\n";
  }
}

ModelParams load_checkpoint(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "checkpoint.manifest");
  if (!manifest) throw IoError("missing checkpoint manifest in " + dir);
  std::string line;
  std::getline(manifest, line);
  check(line == "format: sclab-checkpoint-v1", "checkpoint: unknown format line");
  std::getline(manifest, line);
  check(line == "config:", "checkpoint: expected config section");
  std::string config_text;
  while (std::getline(manifest, line) && line.rfind("  ", 0) == 0 &&
         line != "tensors:")
    config_text += line.substr(2) + "\n";
  check(line == "tensors:", "checkpoint: expected tensors section");

  const EncoderConfig config =
      EncoderConfig::from_config(cfg::KvConfig::parse_string(config_text));
  ModelParams params = ModelParams::init(config, 0);
  auto named = params.named();
  std::size_t loaded = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const std::size_t eq = line.find(" = ");
    check(eq != std::string::npos && line.rfind("  ", 0) == 0,
          "checkpoint: malformed tensor line '" + line + "'");
    const std::string name = line.substr(2, eq - 2);
    const std::string file = line.substr(eq + 3);
    auto it = std::find_if(named.begin(), named.end(),
                           [&](const auto& p) { return p.first == name; });
    check(it != named.end(), "checkpoint: unknown parameter '" + name + "'");
    Tensor t = load_tensor_file((fs::path(dir) / file).string());
    check(t.shape() == it->second.shape(),
          "checkpoint: shape mismatch for '" + name + "'");
    it->second.data() = t.data();
    ++loaded;
  }
  check(loaded == named.size(), "checkpoint: missing parameters");
  return params;
}

}  // namespace sclab::enc
