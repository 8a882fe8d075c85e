#include "sclab/worlds.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sclab/tensor.hpp"

namespace sclab::worlds {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Rgb {
  double r, g, b;
};

const std::vector<Rgb> kGlyphPalette = {
    {0.85, 0.10, 0.10}, {0.10, 0.70, 0.15}, {0.15, 0.25, 0.85},
    {0.90, 0.85, 0.10}, {0.60, 0.20, 0.75}, {0.95, 0.55, 0.10},
    {0.10, 0.80, 0.80}, {0.95, 0.95, 0.95}};

const std::vector<Rgb> kContextPalette = {
    {0.25, 0.45, 0.80}, {0.80, 0.72, 0.60}, {0.35, 0.35, 0.38},
    {0.15, 0.50, 0.20}, {0.90, 0.80, 0.55}, {0.60, 0.80, 0.95}};

constexpr std::size_t kMaxShapes = 8;
constexpr std::size_t kGridCells = 4;

std::vector<std::string> parse_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t b = item.find_first_not_of(" \t");
    const std::size_t e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

void WorldSpec::validate() const {
  check(attribute_rate >= 0.0 && attribute_rate <= 1.0,
        "world spec: attribute_rate must be in [0,1]");
  check(sparsity >= 0.0 && sparsity <= 1.0, "world spec: sparsity must be in [0,1]");
  check(image_size >= 16 && image_size % kGridCells == 0,
        "world spec: image_size must be >= 16 and divisible by 4");
  const std::vector<const std::vector<std::string>*> axes = {
      &inv.objects, &inv.colors, &inv.states, &inv.relations, &inv.contexts};
  for (const auto* axis : axes) check(!axis->empty(), "world spec: empty inventory");
  check(inv.objects.size() <= kMaxShapes, "world spec: too many objects for glyph set");
  check(inv.colors.size() <= kGlyphPalette.size(), "world spec: too many colors");
  check(inv.contexts.size() <= kContextPalette.size(), "world spec: too many contexts");
  // Caption grammar is invertible only if axis words never collide.
  std::set<std::string> seen;
  for (const auto* axis : axes)
    for (const auto& w : *axis)
      check(seen.insert(w).second, "world spec: duplicate inventory word '" + w + "'");
}

WorldSpec WorldSpec::from_config(const cfg::KvConfig& config) {
  WorldSpec spec;
  if (config.has("objects")) spec.inv.objects = parse_list(config.require_string("objects"));
  if (config.has("colors")) spec.inv.colors = parse_list(config.require_string("colors"));
  if (config.has("states")) spec.inv.states = parse_list(config.require_string("states"));
  if (config.has("relations"))
    spec.inv.relations = parse_list(config.require_string("relations"));
  if (config.has("contexts"))
    spec.inv.contexts = parse_list(config.require_string("contexts"));
  spec.attribute_rate = config.get_double("attribute_rate", spec.attribute_rate);
  spec.sparsity = config.get_double("sparsity", spec.sparsity);
  spec.n_train = config.get_uint("n_train", spec.n_train);
  spec.n_eval = config.get_uint("n_eval", spec.n_eval);
  spec.image_size = config.get_uint("image_size", spec.image_size);
  spec.seed = config.get_uint("seed", spec.seed);
  spec.validate();
  return spec;
}

std::string WorldSpec::echo() const {
  std::stringstream ss;
  ss << "objects = " << join(inv.objects, ",") << "\n";
  ss << "colors = " << join(inv.colors, ",") << "\n";
  ss << "states = " << join(inv.states, ",") << "\n";
  ss << "relations = " << join(inv.relations, ",") << "\n";
  ss << "contexts = " << join(inv.contexts, ",") << "\n";
  ss << "attribute_rate = " << attribute_rate << "\n";
  ss << "sparsity = " << sparsity << "\n";
  ss << "n_train = " << n_train << "\n";
  ss << "n_eval = " << n_eval << "\n";
  ss << "image_size = " << image_size << "\n";
  ss << "seed = " << seed << "\n";
  return ss.str();
}

World::World(WorldSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t combos = spec_.inv.objects.size() * spec_.inv.colors.size() *
                             spec_.inv.states.size() * spec_.inv.relations.size() *
                             spec_.inv.contexts.size();
  admitted_.assign(combos, true);
  n_admitted_ = combos;
  if (spec_.sparsity < 1.0) {
    auto rng = make_rng(spec_.seed, "worlds/admission");
    std::bernoulli_distribution admit(spec_.sparsity);
    n_admitted_ = 0;
    for (std::size_t i = 0; i < combos; ++i) {
      admitted_[i] = admit(rng);
      if (admitted_[i]) ++n_admitted_;
    }
    if (n_admitted_ == 0)
      throw DomainError("world spec: sparsity admitted no attribute combinations");
  }
}

std::size_t World::combo_index(const Scene& s) const {
  const auto& inv = spec_.inv;
  return (((s.object * inv.colors.size() + s.color) * inv.states.size() + s.state) *
              inv.relations.size() +
          s.relation) *
             inv.contexts.size() +
         s.context;
}

Scene World::sample_scene(std::mt19937_64& rng) const {
  const auto& inv = spec_.inv;
  auto draw = [&rng](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };
  Scene s;
  do {
    s.object = draw(inv.objects.size());
    s.color = draw(inv.colors.size());
    s.state = draw(inv.states.size());
    s.relation = draw(inv.relations.size());
    s.context = draw(inv.contexts.size());
  } while (!admitted_[combo_index(s)]);
  s.position = draw(kGridCells);
  return s;
}

Sample World::make_sample(std::string_view split, std::size_t index) const {
  auto rng = make_rng(spec_.seed,
                      "worlds/" + std::string(split) + "/" + std::to_string(index));
  Sample sample;
  sample.scene = sample_scene(rng);
  sample.image = render(sample.scene, spec_.inv, spec_.image_size);
  sample.short_caption = caption_short(sample.scene, spec_.inv);
  sample.long_caption = caption_long(sample.scene, spec_.inv, spec_.attribute_rate, rng);
  return sample;
}

Dataset World::generate(std::string_view split, std::size_t count) const {
  check(count >= 1, "generate: need at least one sample");
  Dataset d;
  d.image_size = spec_.image_size;
  d.inv = spec_.inv;
  d.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.samples[i] = make_sample(split, i);
  return d;
}

std::vector<ContrastPair> World::contrast_pairs(const std::string& axis,
                                                std::size_t count,
                                                std::uint64_t seed) const {
  const auto& inv = spec_.inv;
  auto axis_size = [&]() -> std::size_t {
    if (axis == "object") return inv.objects.size();
    if (axis == "color") return inv.colors.size();
    if (axis == "state") return inv.states.size();
    if (axis == "relation") return inv.relations.size();
    if (axis == "context") return inv.contexts.size();
    throw ContractError("contrast_pairs: unknown axis '" + axis + "'");
  }();
  check(axis_size >= 2, "contrast_pairs: axis '" + axis + "' has a single value");

  auto rng = make_rng(seed, "worlds/pairs/" + axis);
  std::vector<ContrastPair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Scene a = sample_scene(rng);
    Scene b = a;
    auto& field = axis == "object"     ? b.object
                  : axis == "color"    ? b.color
                  : axis == "state"    ? b.state
                  : axis == "relation" ? b.relation
                                       : b.context;
    const std::size_t shift =
        std::uniform_int_distribution<std::size_t>(1, axis_size - 1)(rng);
    field = (field + shift) % axis_size;

    ContrastPair pair;
    pair.axis = axis;
    for (auto* side : {&pair.a, &pair.b}) {
      const Scene& scene = side == &pair.a ? a : b;
      side->scene = scene;
      side->image = render(scene, inv, spec_.image_size);
      side->short_caption = caption_short(scene, inv);
      side->long_caption = caption_long(scene, inv, 1.0, rng);
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<double> render(const Scene& scene, const Inventories& inv,
                           std::size_t image_size) {
  const std::size_t S = image_size;
  std::vector<double> img(3 * S * S, 0.92);  // neutral background

  auto put = [&](std::size_t x, std::size_t y, const Rgb& c) {
    img[0 * S * S + y * S + x] = c.r;
    img[1 * S * S + y * S + x] = c.g;
    img[2 * S * S + y * S + x] = c.b;
  };

  // Context band fills the lower half.
  const Rgb ctx = kContextPalette[scene.context];
  for (std::size_t y = S / 2; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) put(x, y, ctx);

  // Glyph color; state desaturates toward gray.
  Rgb col = kGlyphPalette[scene.color];
  const std::size_t n_states = inv.states.size();
  if (n_states > 1 && scene.state > 0) {
    const double blend =
        0.6 * static_cast<double>(scene.state) / static_cast<double>(n_states - 1);
    col.r = (1.0 - blend) * col.r + blend * 0.5;
    col.g = (1.0 - blend) * col.g + blend * 0.5;
    col.b = (1.0 - blend) * col.b + blend * 0.5;
  }

  const std::size_t g = S / kGridCells;  // glyph box edge
  const std::size_t left = scene.position * g;
  const std::size_t top = scene.relation == 0 ? S / 2 + S / 8 : S / 8;
  const double c = (static_cast<double>(g) - 1.0) / 2.0;  // box-local center

  auto inside_shape = [&](std::size_t sx, std::size_t sy) {
    const double dx = static_cast<double>(sx) - c;
    const double dy = static_cast<double>(sy) - c;
    const double r = c - 0.5;
    switch (scene.object % kMaxShapes) {
      case 0:  // square
        return true;
      case 1:  // disc
        return dx * dx + dy * dy <= r * r;
      case 2:  // triangle (apex up)
        return std::fabs(dx) <= (static_cast<double>(sy) + 1.0) / 2.0;
      case 3:  // cross
        return std::fabs(dx) <= g / 6.0 || std::fabs(dy) <= g / 6.0;
      case 4:  // diamond
        return std::fabs(dx) + std::fabs(dy) <= r;
      case 5:  // ring
        return dx * dx + dy * dy <= r * r && dx * dx + dy * dy >= (r / 2) * (r / 2);
      case 6:  // horizontal bar
        return std::fabs(dy) <= g / 6.0;
      default:  // checker
        return (sx / 2 + sy / 2) % 2 == 0;
    }
  };

  for (std::size_t sy = 0; sy < g; ++sy)
    for (std::size_t sx = 0; sx < g; ++sx)
      if (inside_shape(sx, sy)) put(left + sx, top + sy, col);
  return img;
}

std::string caption_short(const Scene& scene, const Inventories& inv) {
  return "a " + inv.objects[scene.object] + " and a " + inv.contexts[scene.context];
}

std::string caption_long(const Scene& scene, const Inventories& inv,
                         double attribute_rate, std::mt19937_64& rng) {
  std::bernoulli_distribution mention(attribute_rate);
  auto say = [&] { return attribute_rate >= 1.0 || (attribute_rate > 0.0 && mention(rng)); };
  std::string caption = "a";
  if (say()) caption += " " + inv.colors[scene.color];
  if (say()) caption += " " + inv.states[scene.state];
  caption += " " + inv.objects[scene.object];
  if (say())
    caption += " " + inv.relations[scene.relation];
  else
    caption += " and";
  caption += " the " + inv.contexts[scene.context];
  return caption;
}

namespace {

// Local word matcher for the manifest table; tests cross-check it against
// the text-pipeline scanner.
bool manifest_match(const std::string& caption,
                    const std::vector<std::vector<std::string>>& groups) {
  std::set<std::string> words;
  std::string cur;
  for (char ch : caption) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      words.insert(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.insert(cur);
  for (const auto& group : groups) {
    bool any = false;
    for (const auto& alt : group) any = any || words.count(alt) > 0;
    if (!any) return false;
  }
  return true;
}

void write_split(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream images(dir / "images.bin", std::ios::binary);
    if (!images) throw IoError("cannot write " + (dir / "images.bin").string());
    for (const auto& s : d.samples) {
      Tensor t = Tensor::from({3, d.image_size, d.image_size}, s.image);
      save_tensor(images, t);
    }
  }
  {
    std::ofstream meta(dir / "meta.json");
    json m;
    m["image_size"] = d.image_size;
    m["objects"] = d.inv.objects;
    m["colors"] = d.inv.colors;
    m["states"] = d.inv.states;
    m["relations"] = d.inv.relations;
    m["contexts"] = d.inv.contexts;
    meta << m.dump() << "\n";
  }
  {
    std::ofstream captions(dir / "captions.jsonl");
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      const auto& s = d.samples[i];
      json rec;
      rec["index"] = i;
      rec["short"] = s.short_caption;
      rec["long"] = s.long_caption;
      rec["object"] = s.scene.object;
      rec["color"] = s.scene.color;
      rec["state"] = s.scene.state;
      rec["relation"] = s.scene.relation;
      rec["context"] = s.scene.context;
      rec["position"] = s.scene.position;
      captions << rec.dump() << "\n";
    }
  }
}

}  // namespace

void build_dataset(const WorldSpec& spec, const std::string& out_dir) {
  check(spec.n_train >= 1, "build_dataset: n_train must be >= 1");
  World world(spec);
  Dataset train = world.generate("train", spec.n_train);
  fs::create_directories(out_dir);
  write_split(train, fs::path(out_dir) / "train");
  if (spec.n_eval >= 1)
    write_split(world.generate("eval", spec.n_eval), fs::path(out_dir) / "eval");

  // Manifest: spec echo plus Table-1 style caption co-occurrence counts over
  // the emitted train long captions.
  std::ofstream manifest(fs::path(out_dir) / "manifest");
  if (!manifest) throw IoError("cannot write dataset manifest");
  manifest << "spec:\n";
  std::stringstream echo(spec.echo());
  std::string line;
  while (std::getline(echo, line)) manifest << "  " << line << "\n";
  manifest.precision(17);
  manifest << "cooccurrence (train long captions):\n";
  manifest << "query,matches,percentage\n";
  const double denom = static_cast<double>(train.samples.size());
  for (const auto& object : spec.inv.objects) {
    for (const auto& context : spec.inv.contexts) {
      std::vector<std::vector<std::vector<std::string>>> queries;
      queries.push_back({{object}, {context}});
      queries.push_back({{object}, {context}, spec.inv.states});
      queries.push_back({{object}, {context}, spec.inv.relations});
      for (const auto& groups : queries) {
        std::uint64_t matches = 0;
        for (const auto& s : train.samples)
          if (manifest_match(s.long_caption, groups)) ++matches;
        std::vector<std::string> names;
        for (const auto& g : groups) names.push_back(join(g, "/"));
        manifest << join(names, "+") << ',' << matches << ','
                 << 100.0 * static_cast<double>(matches) / denom << "\n";
      }
    }
  }
}

Dataset load_dataset(const std::string& split_dir) {
  const fs::path dir(split_dir);
  std::ifstream meta(dir / "meta.json");
  if (!meta) throw IoError("dataset: missing " + (dir / "meta.json").string());
  json m = json::parse(meta);
  Dataset d;
  d.image_size = m.at("image_size").get<std::size_t>();
  d.inv.objects = m.at("objects").get<std::vector<std::string>>();
  d.inv.colors = m.at("colors").get<std::vector<std::string>>();
  d.inv.states = m.at("states").get<std::vector<std::string>>();
  d.inv.relations = m.at("relations").get<std::vector<std::string>>();
  d.inv.contexts = m.at("contexts").get<std::vector<std::string>>();

  std::ifstream captions(dir / "captions.jsonl");
  if (!captions) throw IoError("dataset: missing captions.jsonl in " + split_dir);
  std::ifstream images(dir / "images.bin", std::ios::binary);
  if (!images) throw IoError("dataset: missing images.bin in " + split_dir);

  std::string line;
  while (std::getline(captions, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    Sample s;
    s.short_caption = rec.at("short").get<std::string>();
    s.long_caption = rec.at("long").get<std::string>();
    s.scene.object = rec.at("object").get<std::size_t>();
    s.scene.color = rec.at("color").get<std::size_t>();
    s.scene.state = rec.at("state").get<std::size_t>();
    s.scene.relation = rec.at("relation").get<std::size_t>();
    s.scene.context = rec.at("context").get<std::size_t>();
    s.scene.position = rec.at("position").get<std::size_t>();
    Tensor t = load_tensor(images);
    check(t.shape() == Shape{3, d.image_size, d.image_size},
          "dataset: image blob shape mismatch");
    s.image = t.data();
    d.samples.push_back(std::move(s));
  }
  check(!d.samples.empty(), "dataset: no samples in " + split_dir);
  return d;
}

}  // namespace sclab::worlds
