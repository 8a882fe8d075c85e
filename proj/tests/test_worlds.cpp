#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sclab/text.hpp"
#include "sclab/worlds.hpp"

using namespace sclab;
using namespace sclab::worlds;
namespace fs = std::filesystem;

namespace {

WorldSpec small_spec() {
  WorldSpec spec;
  spec.n_train = 200;
  spec.n_eval = 40;
  spec.seed = 7;
  return spec;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("spec validation") {
  WorldSpec spec;
  CHECK_NOTHROW(spec.validate());

  WorldSpec bad_rate = spec;
  bad_rate.attribute_rate = 1.5;
  CHECK_THROWS_AS(bad_rate.validate(), ContractError);

  WorldSpec empty_axis = spec;
  empty_axis.inv.colors.clear();
  CHECK_THROWS_AS(empty_axis.validate(), ContractError);

  WorldSpec collide = spec;
  collide.inv.contexts[0] = "red";  // already a color
  CHECK_THROWS_AS(collide.validate(), ContractError);

  WorldSpec odd_size = spec;
  odd_size.image_size = 30;
  CHECK_THROWS_AS(odd_size.validate(), ContractError);
}

TEST_CASE("from_config round trip") {
  auto c = cfg::KvConfig::parse_string(
      "objects = fox, owl\ncolors = red, blue\nattribute_rate = 0.5\n"
      "sparsity = 0.9\nn_train = 10\nn_eval = 2\nimage_size = 16\nseed = 3\n");
  const WorldSpec spec = WorldSpec::from_config(c);
  CHECK(spec.inv.objects == std::vector<std::string>{"fox", "owl"});
  CHECK(spec.inv.colors == std::vector<std::string>{"red", "blue"});
  CHECK(spec.inv.states.size() == 2);  // defaults kept
  CHECK(spec.attribute_rate == 0.5);
  CHECK(spec.sparsity == 0.9);
  CHECK(spec.image_size == 16);
  CHECK(spec.seed == 3);
  CHECK(spec.echo().find("objects = fox,owl") != std::string::npos);
}

TEST_CASE("full sparsity admits everything; marginals are uniform") {
  const WorldSpec spec = small_spec();
  World world(spec);
  CHECK(world.admitted_count() == 5u * 4u * 2u * 2u * 3u);

  auto rng = make_rng(1, "test/marginals");
  const std::size_t n = 12000;
  std::map<std::size_t, std::size_t> obj_counts, pos_counts;
  for (std::size_t i = 0; i < n; ++i) {
    const Scene s = world.sample_scene(rng);
    ++obj_counts[s.object];
    ++pos_counts[s.position];
  }
  // chi-square-ish bound: each object expected n/5 = 2400
  for (const auto& [k, c] : obj_counts)
    CHECK(std::fabs(static_cast<double>(c) - n / 5.0) < 5.0 * std::sqrt(n / 5.0));
  CHECK(pos_counts.size() == 4);
}

TEST_CASE("partial sparsity restricts the scene set deterministically") {
  WorldSpec spec = small_spec();
  spec.sparsity = 0.5;
  World w1(spec), w2(spec);
  CHECK(w1.admitted_count() == w2.admitted_count());
  CHECK(w1.admitted_count() > 0);
  CHECK(w1.admitted_count() < 5u * 4u * 2u * 2u * 3u);

  // sampled scenes from both worlds agree combination-for-combination
  auto ra = make_rng(9, "test/sparsity");
  auto rb = make_rng(9, "test/sparsity");
  for (int i = 0; i < 50; ++i) {
    const Scene a = w1.sample_scene(ra);
    const Scene b = w2.sample_scene(rb);
    CHECK(a.object == b.object);
    CHECK(a.context == b.context);
  }

  WorldSpec dead = spec;
  dead.sparsity = 0.0;
  CHECK_THROWS_AS(World{dead}, DomainError);
}

TEST_CASE("captions follow the grammar") {
  const WorldSpec spec = small_spec();
  Scene s;
  s.object = 1;   // man
  s.color = 0;    // red
  s.state = 1;    // statue
  s.relation = 0; // inside
  s.context = 0;  // river
  CHECK(caption_short(s, spec.inv) == "a man and a river");

  auto rng = make_rng(0, "test/cap");
  CHECK(caption_long(s, spec.inv, 1.0, rng) == "a red statue man inside the river");
  CHECK(caption_long(s, spec.inv, 0.0, rng) == "a man and the river");

  // at rate 0 the long caption's content words equal the short caption's
  World world(spec);
  auto r2 = make_rng(3, "test/cap2");
  for (int i = 0; i < 20; ++i) {
    const Scene sc = world.sample_scene(r2);
    const auto lw = text::split_words(caption_long(sc, spec.inv, 0.0, r2));
    const auto sw = text::split_words(caption_short(sc, spec.inv));
    const std::set<std::string> ls(lw.begin(), lw.end()), ss(sw.begin(), sw.end());
    for (const auto& w : ss)
      if (w != "a") CHECK(ls.count(w) == 1);
  }
}

TEST_CASE("render is deterministic and attribute-sensitive") {
  const WorldSpec spec = small_spec();
  const std::size_t S = spec.image_size;
  Scene s;
  s.object = 2;
  s.color = 2;
  s.state = 0;
  s.relation = 1;
  s.context = 1;
  s.position = 2;
  const auto img1 = render(s, spec.inv, S);
  const auto img2 = render(s, spec.inv, S);
  CHECK(img1 == img2);
  CHECK(img1.size() == 3 * S * S);
  for (double v : img1) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // every axis change moves at least one pixel
  for (auto mutate : {+[](Scene& x) { x.object = 3; }, +[](Scene& x) { x.color = 0; },
                      +[](Scene& x) { x.state = 1; }, +[](Scene& x) { x.relation = 0; },
                      +[](Scene& x) { x.context = 2; },
                      +[](Scene& x) { x.position = 0; }}) {
    Scene t = s;
    mutate(t);
    CHECK(render(t, spec.inv, S) != img1);
  }

  // relation flips which vertical half holds the glyph: with relation=outside
  // the top half must differ from a pure-background render, inside must not
  Scene inside = s;
  inside.relation = 0;
  const auto img_in = render(inside, spec.inv, S);
  bool top_differs_outside = false, top_differs_inside = false;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < S / 2; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const std::size_t i = ch * S * S + y * S + x;
        if (img1[i] != 0.92) top_differs_outside = true;
        if (img_in[i] != 0.92) top_differs_inside = true;
      }
  CHECK(top_differs_outside);
  CHECK(!top_differs_inside);
}

TEST_CASE("make_sample is pure per index") {
  World world(small_spec());
  const Sample a = world.make_sample("train", 17);
  const Sample b = world.make_sample("train", 17);
  CHECK(a.image == b.image);
  CHECK(a.long_caption == b.long_caption);
  const Sample c = world.make_sample("eval", 17);
  CHECK((c.long_caption != a.long_caption || c.image != a.image));

  // generate() == per-index assembly, so index sharding is exact
  const Dataset d = world.generate("train", 5);
  for (std::size_t i = 0; i < 5; ++i) {
    const Sample s = world.make_sample("train", i);
    CHECK(d.samples[i].image == s.image);
    CHECK(d.samples[i].long_caption == s.long_caption);
  }
}

TEST_CASE("contrast pairs differ on exactly the requested axis") {
  World world(small_spec());
  for (const std::string axis : {"object", "color", "state", "relation", "context"}) {
    const auto pairs = world.contrast_pairs(axis, 10, 5);
    CHECK(pairs.size() == 10);
    for (const auto& p : pairs) {
      const Scene& a = p.a.scene;
      const Scene& b = p.b.scene;
      int diffs = 0;
      diffs += a.object != b.object;
      diffs += a.color != b.color;
      diffs += a.state != b.state;
      diffs += a.relation != b.relation;
      diffs += a.context != b.context;
      CHECK(diffs == 1);
      CHECK(a.position == b.position);
      CHECK(p.a.image != p.b.image);
      // fully attributed captions name the differing value on both sides
      const auto wa = text::split_words(p.a.long_caption);
      const auto wb = text::split_words(p.b.long_caption);
      CHECK(std::set<std::string>(wa.begin(), wa.end()) !=
            std::set<std::string>(wb.begin(), wb.end()));
    }
  }
  CHECK_THROWS_AS(world.contrast_pairs("flavor", 3, 0), ContractError);

  WorldSpec one_state = small_spec();
  one_state.inv.states = {"real"};
  CHECK_THROWS_AS(World(one_state).contrast_pairs("state", 3, 0), ContractError);
}

TEST_CASE("dataset build, load, and manifest cross-check") {
  WorldSpec spec = small_spec();
  spec.n_train = 300;
  spec.n_eval = 30;
  const fs::path dir = fs::temp_directory_path() / "sclab_worlds_test";
  fs::remove_all(dir);
  build_dataset(spec, dir.string());

  const Dataset train = load_dataset((dir / "train").string());
  CHECK(train.samples.size() == 300);
  CHECK(train.image_size == spec.image_size);
  CHECK(train.inv.objects == spec.inv.objects);
  World world(spec);
  for (std::size_t i : {0ul, 7ul, 299ul}) {
    const Sample s = world.make_sample("train", i);
    CHECK(train.samples[i].image == s.image);
    CHECK(train.samples[i].short_caption == s.short_caption);
    CHECK(train.samples[i].long_caption == s.long_caption);
    CHECK(train.samples[i].scene.context == s.scene.context);
  }
  const Dataset eval = load_dataset((dir / "eval").string());
  CHECK(eval.samples.size() == 30);

  // manifest co-occurrence counts must agree with the text-pipeline scanner
  std::vector<std::string> corpus;
  for (const auto& s : train.samples) corpus.push_back(s.long_caption);
  std::ifstream manifest(dir / "manifest");
  REQUIRE(bool(manifest));
  std::string line;
  bool in_table = false;
  std::size_t checked = 0;
  while (std::getline(manifest, line)) {
    if (line == "query,matches,percentage") {
      in_table = true;
      continue;
    }
    if (!in_table || line.empty()) continue;
    std::stringstream row(line);
    std::string qtext, matches_str, pct_str;
    std::getline(row, qtext, ',');
    std::getline(row, matches_str, ',');
    std::getline(row, pct_str, ',');
    text::CooccurrenceQuery q;
    std::stringstream groups(qtext);
    std::string group;
    while (std::getline(groups, group, '+')) {
      std::vector<std::string> alts;
      std::stringstream alt_ss(group);
      std::string alt;
      while (std::getline(alt_ss, alt, '/')) alts.push_back(alt);
      q.groups.push_back(alts);
    }
    const auto res = text::cooccurrence_count(corpus, q);
    CHECK(res.matches == std::stoull(matches_str));
    CHECK(res.percentage == doctest::Approx(std::stod(pct_str)).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked == 5u * 3u * 3u);  // objects x contexts x query variants

  // byte-identical rerun
  const std::string imgs = slurp(dir / "train" / "images.bin");
  const std::string caps = slurp(dir / "train" / "captions.jsonl");
  const std::string man = slurp(dir / "manifest");
  const fs::path dir2 = fs::temp_directory_path() / "sclab_worlds_test2";
  fs::remove_all(dir2);
  build_dataset(spec, dir2.string());
  CHECK(slurp(dir2 / "train" / "images.bin") == imgs);
  CHECK(slurp(dir2 / "train" / "captions.jsonl") == caps);
  CHECK(slurp(dir2 / "manifest") == man);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("loading a missing split fails cleanly") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/sclab"), IoError);
}
