#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sclab/eval.hpp"
#include "sclab/training.hpp"

using namespace sclab;
using namespace sclab::eval;

namespace {

enc::EncoderConfig tiny_encoder() {
  enc::EncoderConfig c;
  c.depth = 1;
  c.width = 16;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  c.patch_size = 8;
  c.image_size = 16;
  c.max_seq_len = 12;
  c.embed_dim = 8;
  c.vocab_size = 32;
  return c;
}

Tensor unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  auto rng = make_rng(seed, "test/unit_rows");
  std::normal_distribution<double> nd;
  std::vector<double> x(n * d);
  for (auto& v : x) v = nd(rng);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    s = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] /= s;
  }
  return Tensor::from({n, d}, std::move(x));
}

}  // namespace

TEST_CASE("embedding helpers are chunk-invariant") {
  worlds::WorldSpec spec;
  spec.image_size = 16;
  spec.seed = 3;
  worlds::World world(spec);
  const worlds::Dataset data = world.generate("eval", 10);
  const enc::ModelParams params = enc::ModelParams::init(tiny_encoder(), 1);

  const Tensor a = embed_images(params, data, 3);
  const Tensor b = embed_images(params, data, 64);
  CHECK(a.shape() == Shape{10, 8});
  CHECK(a.data() == b.data());

  std::vector<std::string> caps;
  for (const auto& s : data.samples) caps.push_back(s.short_caption);
  std::vector<std::string> corpus = caps;
  const text::Vocabulary vocab = text::build_vocab(corpus, 32);
  const Tensor t1 = embed_texts(params, vocab, caps, 4);
  const Tensor t2 = embed_texts(params, vocab, caps, 64);
  CHECK(t1.data() == t2.data());
}

TEST_CASE("zero shot classification") {
  const enc::EncoderConfig ec = tiny_encoder();
  const enc::ModelParams params = enc::ModelParams::init(ec, 7);
  const std::vector<std::string> corpus = {"a photo of a bear",
                                           "a photo of a river"};
  const text::Vocabulary vocab = text::build_vocab(corpus, 32);

  // single class -> accuracy forced to 1
  const Tensor any = unit_rows(5, ec.embed_dim, 1);
  const ZeroShotResult one =
      zero_shot_classify(params, vocab, {"bear"}, any, {0, 0, 0, 0, 0});
  CHECK(one.accuracy == 1.0);

  // image embeddings equal to the class prototypes -> perfect accuracy
  const std::vector<std::string> names = {"bear", "river"};
  const Tensor protos = embed_texts(
      params, vocab, {"a photo of a bear", "a photo of a river"});
  const ZeroShotResult ideal =
      zero_shot_classify(params, vocab, names, protos, {0, 1});
  CHECK(ideal.accuracy == 1.0);
  CHECK(ideal.predictions == std::vector<std::size_t>{0, 1});

  // random embeddings match a brute-force oracle exactly
  const Tensor imgs = unit_rows(12, ec.embed_dim, 5);
  std::vector<std::size_t> labels(12);
  for (std::size_t i = 0; i < 12; ++i) labels[i] = i % 2;
  const ZeroShotResult r = zero_shot_classify(params, vocab, names, imgs, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    double best = -2.0;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 2; ++c) {
      double dot = 0.0, ni = 0.0, np = 0.0;
      for (std::size_t j = 0; j < ec.embed_dim; ++j) {
        dot += imgs.data()[i * ec.embed_dim + j] * protos.data()[c * ec.embed_dim + j];
        ni += imgs.data()[i * ec.embed_dim + j] * imgs.data()[i * ec.embed_dim + j];
        np += protos.data()[c * ec.embed_dim + j] * protos.data()[c * ec.embed_dim + j];
      }
      const double s = dot / std::sqrt(ni * np);
      if (s > best) {
        best = s;
        arg = c;
      }
    }
    CHECK(r.predictions[i] == arg);
    if (arg == labels[i]) ++correct;
  }
  CHECK(r.accuracy == doctest::Approx(correct / 12.0).epsilon(1e-15));

  // class that tokenizes to nothing known -> degenerate class error
  CHECK_THROWS_AS(zero_shot_classify(params, vocab, {"zzzunknown"}, imgs,
                                     std::vector<std::size_t>(12, 0)),
                  DomainError);
}

TEST_CASE("retrieval recall") {
  // orthonormal aligned rows -> perfect retrieval both ways
  const Tensor eye = Tensor::from({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0,
                                           0, 0, 1, 0, 0, 0, 0, 1});
  const RecallReport perfect = retrieval_recall(eye, eye, {1, 2});
  CHECK(perfect.image_to_text.at(1) == 1.0);
  CHECK(perfect.text_to_image.at(1) == 1.0);

  // identical embeddings: index tie-break forces R@1 = 1/N
  const Tensor same = Tensor::from({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
  const RecallReport tied = retrieval_recall(same, same, {1, 4});
  CHECK(tied.image_to_text.at(1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(tied.image_to_text.at(4) == 1.0);

  // random N=8 vs exhaustive oracle
  const std::size_t N = 8, D = 5;
  const Tensor u = unit_rows(N, D, 11), v = unit_rows(N, D, 12);
  const RecallReport r = retrieval_recall(u, v, {1, 3, 8});
  for (std::size_t k : {1ul, 3ul, 8ul}) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t j = 0; j < N; ++j) {
        double dot = 0.0;
        for (std::size_t x = 0; x < D; ++x)
          dot += u.data()[i * D + x] * v.data()[j * D + x];
        scored.emplace_back(-dot, j);  // sort ascending = similarity descending
      }
      std::sort(scored.begin(), scored.end());
      for (std::size_t p = 0; p < k; ++p)
        if (scored[p].second == i) ++hits;
    }
    CHECK(r.image_to_text.at(k) ==
          doctest::Approx(static_cast<double>(hits) / N).epsilon(1e-15));
  }
  // monotone in k
  CHECK(r.image_to_text.at(1) <= r.image_to_text.at(3));
  CHECK(r.image_to_text.at(3) <= r.image_to_text.at(8));

  // scale invariance of the ranking
  Tensor su = Tensor::from(u.shape(), u.data());
  for (auto& x : su.data()) x *= 7.5;
  const RecallReport rs = retrieval_recall(su, v, {1, 3, 8});
  CHECK(rs.image_to_text == r.image_to_text);

  CHECK_THROWS_AS(retrieval_recall(u, v, {9}), ContractError);
  CHECK_THROWS_AS(retrieval_recall(u, v, {0}), ContractError);
}

TEST_CASE("assignment test and pair discrimination") {
  CHECK(assignment_correct(0.9, 0.8, 0.1, 0.2));
  CHECK(!assignment_correct(0.1, 0.2, 0.9, 0.8));
  CHECK(!assignment_correct(0.5, 0.5, 0.5, 0.5));  // ties are incorrect
  // symmetry under consistent (A,B) swap
  CHECK(assignment_correct(0.8, 0.9, 0.2, 0.1) ==
        assignment_correct(0.9, 0.8, 0.1, 0.2));

  // an untrained model on real contrast pairs: runs, reports per-axis values
  worlds::WorldSpec spec;
  spec.image_size = 16;
  spec.seed = 5;
  worlds::World world(spec);
  std::vector<worlds::ContrastPair> pairs = world.contrast_pairs("state", 6, 1);
  const auto color_pairs = world.contrast_pairs("color", 6, 2);
  pairs.insert(pairs.end(), color_pairs.begin(), color_pairs.end());

  std::vector<std::string> corpus;
  for (const auto& p : pairs) {
    corpus.push_back(p.a.long_caption);
    corpus.push_back(p.b.long_caption);
  }
  const text::Vocabulary vocab = text::build_vocab(corpus, 32);
  const enc::ModelParams params = enc::ModelParams::init(tiny_encoder(), 3);
  const auto acc = pair_discrimination(params, vocab, pairs);
  REQUIRE(acc.size() == 2);
  CHECK(acc.count("state") == 1);
  CHECK(acc.count("color") == 1);
  for (const auto& [axis, a] : acc) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("summary stats") {
  const SummaryStats s = summary_stats({0.3, 0.2, 0.1});
  CHECK(s.value_range == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(s.mean_slope == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(s.std_dev == doctest::Approx(std::sqrt(0.02 / 3.0)).epsilon(1e-12));
  CHECK(!s.has_top1_to_100);

  const SummaryStats flat = summary_stats({0.5, 0.5, 0.5, 0.5});
  CHECK(flat.std_dev == 0.0);
  CHECK(flat.value_range == 0.0);
  CHECK(flat.mean_slope == 0.0);

  // telescoping identity on a random descending sequence
  auto rng = make_rng(4, "test/stats");
  std::vector<double> means(173);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (auto& m : means) m = uni(rng);
  std::sort(means.rbegin(), means.rend());
  const SummaryStats t = summary_stats(means);
  CHECK(t.mean_slope * static_cast<double>(means.size() - 1) ==
        doctest::Approx(t.value_range).epsilon(1e-12));
  CHECK(t.has_top1_to_100);
  CHECK(t.top1_to_100 == doctest::Approx(means[0] - means[99]).epsilon(1e-15));

  CHECK_THROWS_AS(summary_stats({0.5}), ContractError);
}

TEST_CASE("word image similarity") {
  worlds::WorldSpec spec;
  spec.image_size = 16;
  spec.seed = 9;
  spec.attribute_rate = 1.0;
  worlds::World world(spec);
  const worlds::Dataset data = world.generate("train", 60);
  std::vector<std::string> corpus;
  for (const auto& s : data.samples) corpus.push_back(s.long_caption);
  const text::Vocabulary vocab = text::build_vocab(corpus, 32);
  const enc::ModelParams params = enc::ModelParams::init(tiny_encoder(), 13);

  const WordSimStats stats = word_image_similarity(params, vocab, data, 5);
  CHECK(stats.n_words >= 2);
  CHECK(std::is_sorted(stats.means.rbegin(), stats.means.rend()));
  for (std::uint64_t f : stats.freqs) CHECK(f >= 5);

  // oracle recomputation for one word
  const std::string& w = stats.words[0];
  const Tensor img = embed_images(params, data);
  const Tensor wv = embed_texts(params, vocab, {w});
  double total = 0.0;
  std::uint64_t freq = 0;
  const std::size_t D = img.shape()[1];
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto words = text::split_words(data.samples[i].long_caption);
    for (const auto& x : words)
      if (x == w) {
        double dot = 0.0;
        for (std::size_t j = 0; j < D; ++j)
          dot += img.data()[i * D + j] * wv.data()[j];
        total += dot;  // rows already unit norm
        ++freq;
      }
  }
  CHECK(stats.freqs[0] == freq);
  CHECK(stats.means[0] ==
        doctest::Approx(total / static_cast<double>(freq)).epsilon(1e-9));

  // impossible filter -> error
  CHECK_THROWS_AS(word_image_similarity(params, vocab, data, 100000), DomainError);

  std::stringstream csv, summary;
  write_wordsim_csv(csv, stats);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "rank,word,freq,mean_sim");
  write_wordsim_summary(summary, stats);
  CHECK(summary.str().find("mean_slope:") != std::string::npos);
}

TEST_CASE("published summary consistency") {
  // slope x (n-1) reproduces the published range within rounding
  CHECK(std::fabs(0.000208 * 991.0 - 0.2065) < 1.5e-3);
  CHECK(std::fabs(0.000141 * 991.0 - 0.1401) < 1.5e-3);
}
