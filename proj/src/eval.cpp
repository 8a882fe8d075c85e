#include "sclab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

namespace sclab::eval {

namespace {

double cosine(const std::vector<double>& a, std::size_t ia,
              const std::vector<double>& b, std::size_t ib, std::size_t d) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double x = a[ia * d + j], y = b[ib * d + j];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  check(denom > 0.0, "cosine: degenerate embedding");
  return dot / denom;
}

Tensor concat_rows(const std::vector<Tensor>& chunks) {
  check(!chunks.empty(), "concat_rows: empty");
  const std::size_t d = chunks.front().shape()[1];
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& c : chunks) {
    data.insert(data.end(), c.data().begin(), c.data().end());
    rows += c.shape()[0];
  }
  return Tensor::from({rows, d}, std::move(data));
}

}  // namespace

Tensor embed_images(const enc::ModelParams& params, const worlds::Dataset& data,
                    std::size_t chunk) {
  check(!data.samples.empty(), "embed_images: empty dataset");
  check(chunk >= 1, "embed_images: chunk must be >= 1");
  NoGradGuard ng;
  std::vector<Tensor> out;
  for (std::size_t start = 0; start < data.samples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, data.samples.size() - start);
    std::vector<const std::vector<double>*> images;
    for (std::size_t i = 0; i < n; ++i)
      images.push_back(&data.samples[start + i].image);
    out.push_back(
        enc::encode_image(enc::make_image_batch(images, data.image_size), params).u);
  }
  return concat_rows(out);
}

Tensor embed_texts(const enc::ModelParams& params, const text::Vocabulary& vocab,
                   const std::vector<std::string>& captions, std::size_t chunk) {
  check(!captions.empty(), "embed_texts: empty caption list");
  check(chunk >= 1, "embed_texts: chunk must be >= 1");
  NoGradGuard ng;
  std::vector<Tensor> out;
  for (std::size_t start = 0; start < captions.size(); start += chunk) {
    const std::size_t n = std::min(chunk, captions.size() - start);
    std::vector<text::TokenIds> toks;
    for (std::size_t i = 0; i < n; ++i)
      toks.push_back(text::tokenize(captions[start + i], vocab,
                                    params.config.max_seq_len));
    out.push_back(enc::encode_text(toks, params));
  }
  return concat_rows(out);
}

ZeroShotResult zero_shot_classify(const enc::ModelParams& params,
                                  const text::Vocabulary& vocab,
                                  const std::vector<std::string>& class_names,
                                  const Tensor& image_embeddings,
                                  const std::vector<std::size_t>& labels) {
  check(!class_names.empty(), "zero_shot: need at least one class");
  check(image_embeddings.rank() == 2, "zero_shot: embeddings must be (N, D)");
  const std::size_t N = image_embeddings.shape()[0];
  const std::size_t D = image_embeddings.shape()[1];
  check(labels.size() == N, "zero_shot: one label per image required");
  for (std::size_t l : labels)
    check(l < class_names.size(), "zero_shot: label out of range");

  std::vector<std::string> prompts;
  for (const auto& name : class_names) {
    // the class name itself must contribute at least one known content word;
    // the template words alone make every prompt non-empty
    const text::TokenIds t = text::tokenize(name, vocab, params.config.max_seq_len);
    bool has_content = false;
    for (std::size_t id : t.ids) has_content = has_content || !vocab.is_special(id);
    if (!has_content)
      throw DomainError("zero_shot: class '" + name +
                        "' tokenizes to no content words");
    prompts.push_back("a photo of a " + name);
  }
  const Tensor prototypes = embed_texts(params, vocab, prompts);

  ZeroShotResult r;
  r.predictions.resize(N);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t best = 0;
    double best_sim = cosine(image_embeddings.data(), i, prototypes.data(), 0, D);
    for (std::size_t c = 1; c < class_names.size(); ++c) {
      const double s = cosine(image_embeddings.data(), i, prototypes.data(), c, D);
      if (s > best_sim) {  // strict: ties keep the lowest index
        best_sim = s;
        best = c;
      }
    }
    r.predictions[i] = best;
    if (best == labels[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(N);
  return r;
}

RecallReport retrieval_recall(const Tensor& u, const Tensor& v,
                              const std::vector<std::size_t>& ks) {
  check(u.rank() == 2 && u.shape() == v.shape(),
        "retrieval: u and v must be row-aligned (N, D)");
  const std::size_t N = u.shape()[0], D = u.shape()[1];
  check(!ks.empty(), "retrieval: no k values");
  for (std::size_t k : ks)
    check(k >= 1 && k <= N, "retrieval: k out of range [1, N]");

  // rank of the true match among all candidates for each query; ties are
  // broken by index (earlier candidates win)
  auto match_ranks = [&](const Tensor& query, const Tensor& cand) {
    std::vector<std::size_t> ranks(N);
    for (std::size_t i = 0; i < N; ++i) {
      const double true_sim = cosine(query.data(), i, cand.data(), i, D);
      std::size_t better = 0;
      for (std::size_t j = 0; j < N; ++j) {
        if (j == i) continue;
        const double s = cosine(query.data(), i, cand.data(), j, D);
        if (s > true_sim || (s == true_sim && j < i)) ++better;
      }
      ranks[i] = better;  // 0 = top-1
    }
    return ranks;
  };

  const auto i2t = match_ranks(u, v);
  const auto t2i = match_ranks(v, u);
  RecallReport r;
  for (std::size_t k : ks) {
    auto recall = [&](const std::vector<std::size_t>& ranks) {
      std::size_t hit = 0;
      for (std::size_t rank : ranks)
        if (rank < k) ++hit;
      return static_cast<double>(hit) / static_cast<double>(N);
    };
    r.image_to_text[k] = recall(i2t);
    r.text_to_image[k] = recall(t2i);
  }
  return r;
}

bool assignment_correct(double s_aa, double s_bb, double s_ab, double s_ba) {
  return s_aa + s_bb > s_ab + s_ba;
}

std::map<std::string, double> pair_discrimination(
    const enc::ModelParams& params, const text::Vocabulary& vocab,
    const std::vector<worlds::ContrastPair>& pairs) {
  check(!pairs.empty(), "pair_discrimination: no pairs");
  NoGradGuard ng;
  std::map<std::string, std::size_t> correct, total;
  for (const auto& p : pairs) {
    worlds::Dataset d;
    d.image_size = params.config.image_size;
    d.samples = {p.a, p.b};
    const Tensor img = embed_images(params, d);
    const Tensor cap =
        embed_texts(params, vocab, {p.a.long_caption, p.b.long_caption});
    const std::size_t D = img.shape()[1];
    const double s_aa = cosine(img.data(), 0, cap.data(), 0, D);
    const double s_bb = cosine(img.data(), 1, cap.data(), 1, D);
    const double s_ab = cosine(img.data(), 0, cap.data(), 1, D);
    const double s_ba = cosine(img.data(), 1, cap.data(), 0, D);
    ++total[p.axis];
    if (assignment_correct(s_aa, s_bb, s_ab, s_ba)) ++correct[p.axis];
  }
  std::map<std::string, double> acc;
  for (const auto& [axis, n] : total)
    acc[axis] = static_cast<double>(correct[axis]) / static_cast<double>(n);
  return acc;
}

SummaryStats summary_stats(const std::vector<double>& ranked_means) {
  check(ranked_means.size() >= 2, "summary_stats: need at least two words");
  const std::size_t n = ranked_means.size();
  SummaryStats s;

  double mean = 0.0;
  for (double m : ranked_means) mean += m;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double m : ranked_means) var += (m - mean) * (m - mean);
  s.std_dev = std::sqrt(var / static_cast<double>(n));

  s.value_range = ranked_means.front() - ranked_means.back();
  // mean of consecutive drops; the sum telescopes to the range
  double drops = 0.0;
  for (std::size_t i = 1; i < n; ++i) drops += ranked_means[i - 1] - ranked_means[i];
  s.mean_slope = drops / static_cast<double>(n - 1);

  if (n >= 100) {
    s.top1_to_100 = ranked_means[0] - ranked_means[99];
    s.has_top1_to_100 = true;
  }
  return s;
}

WordSimStats word_image_similarity(const enc::ModelParams& params,
                                   const text::Vocabulary& vocab,
                                   const worlds::Dataset& data,
                                   std::uint64_t min_freq) {
  check(!data.samples.empty(), "word_image_similarity: empty dataset");
  NoGradGuard ng;
  const Tensor img = embed_images(params, data);
  const std::size_t D = img.shape()[1];

  // accumulate per-word similarity over every occurrence in long captions
  std::map<std::string, double> total;
  std::map<std::string, std::uint64_t> freq;
  std::map<std::string, std::size_t> word_row;  // into the word embedding matrix

  // distinct in-vocab content words, embedded once each
  std::vector<std::string> distinct;
  for (const auto& s : data.samples)
    for (const auto& w : text::split_words(s.long_caption)) {
      const std::size_t id = vocab.lookup(w);
      if (id >= vocab.size() || vocab.is_special(id)) continue;
      if (!word_row.count(w)) {
        word_row[w] = distinct.size();
        distinct.push_back(w);
      }
    }
  if (distinct.empty())
    throw DomainError("word_image_similarity: no in-vocab content words");
  const Tensor wv = embed_texts(params, vocab, distinct);

  for (std::size_t i = 0; i < data.samples.size(); ++i)
    for (const auto& w : text::split_words(data.samples[i].long_caption)) {
      const auto it = word_row.find(w);
      if (it == word_row.end()) continue;
      total[w] += cosine(img.data(), i, wv.data(), it->second, D);
      ++freq[w];
    }

  // rank surviving words by mean similarity, lexicographic tie-break
  std::vector<std::pair<std::string, double>> ranked;
  for (const auto& [w, t] : total) {
    if (freq[w] < min_freq) continue;
    ranked.emplace_back(w, t / static_cast<double>(freq[w]));
  }
  if (ranked.empty())
    throw DomainError("word_image_similarity: no word passes the frequency filter");
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  WordSimStats stats;
  stats.n_words = ranked.size();
  for (const auto& [w, m] : ranked) {
    stats.words.push_back(w);
    stats.means.push_back(m);
    stats.freqs.push_back(freq[w]);
  }
  if (stats.n_words >= 2) stats.summary = summary_stats(stats.means);
  return stats;
}

void write_wordsim_csv(std::ostream& out, const WordSimStats& stats) {
  out.precision(17);
  out << "rank,word,freq,mean_sim\n";
  for (std::size_t i = 0; i < stats.n_words; ++i)
    out << (i + 1) << ',' << stats.words[i] << ',' << stats.freqs[i] << ','
        << stats.means[i] << '\n';
}

void write_wordsim_summary(std::ostream& out, const WordSimStats& stats) {
  out.precision(10);
  out << "words_ranked: " << stats.n_words << "\n";
  out << "std_dev: " << stats.summary.std_dev << "\n";
  out << "value_range: " << stats.summary.value_range << "\n";
  out << "mean_slope: " << stats.summary.mean_slope << "\n";
  if (stats.summary.has_top1_to_100)
    out << "top1_to_100: " << stats.summary.top1_to_100 << "\n";
  else
    out << "top1_to_100: n/a (fewer than 100 words)\n";
}

}  // namespace sclab::eval
