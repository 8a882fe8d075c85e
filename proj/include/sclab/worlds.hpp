#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sclab/common.hpp"
#include "sclab/config.hpp"

namespace sclab::worlds {

// Symbolic world state; every field indexes into the spec inventories.
struct Scene {
  std::size_t object = 0;
  std::size_t color = 0;
  std::size_t state = 0;
  std::size_t relation = 0;  // 0 = inside the context region, 1 = outside
  std::size_t context = 0;
  std::size_t position = 0;  // horizontal grid cell
};

struct Inventories {
  std::vector<std::string> objects = {"bear", "man", "cat", "dog", "bird"};
  std::vector<std::string> colors = {"red", "green", "blue", "yellow"};
  std::vector<std::string> states = {"real", "statue"};
  std::vector<std::string> relations = {"inside", "outside"};
  std::vector<std::string> contexts = {"river", "room", "road"};
};

struct WorldSpec {
  Inventories inv;
  double attribute_rate = 0.5;  // chance a long caption names each attribute
  double sparsity = 1.0;         // chance a full attribute combination exists
  std::size_t n_train = 8000;
  std::size_t n_eval = 1000;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  static WorldSpec from_config(const cfg::KvConfig& config);
  std::string echo() const;
};

struct Sample {
  std::vector<double> image;  // 3 * S * S, values in [0,1]
  std::string short_caption;
  std::string long_caption;
  Scene scene;
};

struct Dataset {
  std::size_t image_size = 0;
  Inventories inv;
  std::vector<Sample> samples;
};

// Matched pair differing on exactly one attribute axis; captions are fully
// attributed so the differing word is always present.
struct ContrastPair {
  std::string axis;  // "object" | "color" | "state" | "relation" | "context"
  Sample a;
  Sample b;
};

// A world is the spec plus its admitted combination set (sparsity draws are
// fixed at construction so rare combinations are rare consistently).
class World {
 public:
  explicit World(WorldSpec spec);

  const WorldSpec& spec() const { return spec_; }
  std::size_t admitted_count() const { return n_admitted_; }

  Scene sample_scene(std::mt19937_64& rng) const;

  // Pure per-index generation: sharding by index range is exact.
  Sample make_sample(std::string_view split, std::size_t index) const;
  Dataset generate(std::string_view split, std::size_t count) const;

  std::vector<ContrastPair> contrast_pairs(const std::string& axis,
                                           std::size_t count,
                                           std::uint64_t seed) const;

 private:
  std::size_t combo_index(const Scene& s) const;
  WorldSpec spec_;
  std::vector<bool> admitted_;
  std::size_t n_admitted_ = 0;
};

std::vector<double> render(const Scene& scene, const Inventories& inv,
                           std::size_t image_size);
std::string caption_short(const Scene& scene, const Inventories& inv);
std::string caption_long(const Scene& scene, const Inventories& inv,
                         double attribute_rate, std::mt19937_64& rng);

// Dataset directory layout:
//   <dir>/train/images.bin      concatenated tensor blobs, one per sample
//   <dir>/train/captions.jsonl  one record per line
//   <dir>/eval/...              same layout
//   <dir>/manifest              spec echo + caption co-occurrence table
void build_dataset(const WorldSpec& spec, const std::string& out_dir);
Dataset load_dataset(const std::string& split_dir);

}  // namespace sclab::worlds
