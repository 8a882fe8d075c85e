#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sclab/encoders.hpp"
#include "sclab/text.hpp"
#include "sclab/worlds.hpp"

namespace sclab::eval {

// Forward-only embedding helpers; both return one row per input, processed
// in fixed-size chunks so memory stays bounded.
Tensor embed_images(const enc::ModelParams& params, const worlds::Dataset& data,
                    std::size_t chunk = 64);
Tensor embed_texts(const enc::ModelParams& params, const text::Vocabulary& vocab,
                   const std::vector<std::string>& captions, std::size_t chunk = 64);

struct ZeroShotResult {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
};

// Template "a photo of a {name}"; argmax cosine with index tie-break.
ZeroShotResult zero_shot_classify(const enc::ModelParams& params,
                                  const text::Vocabulary& vocab,
                                  const std::vector<std::string>& class_names,
                                  const Tensor& image_embeddings,
                                  const std::vector<std::size_t>& labels);

struct RecallReport {
  std::map<std::size_t, double> image_to_text;
  std::map<std::size_t, double> text_to_image;
};

RecallReport retrieval_recall(const Tensor& u, const Tensor& v,
                              const std::vector<std::size_t>& ks);

// 2x2 assignment test; ties count as incorrect.
bool assignment_correct(double s_aa, double s_bb, double s_ab, double s_ba);

// accuracy per attribute axis over matched contrast pairs
std::map<std::string, double> pair_discrimination(
    const enc::ModelParams& params, const text::Vocabulary& vocab,
    const std::vector<worlds::ContrastPair>& pairs);

struct SummaryStats {
  double std_dev = 0.0;
  double value_range = 0.0;
  double mean_slope = 0.0;
  double top1_to_100 = 0.0;
  bool has_top1_to_100 = false;
};

// means must already be in ranked (descending) order
SummaryStats summary_stats(const std::vector<double>& ranked_means);

struct WordSimStats {
  std::size_t n_words = 0;
  std::vector<std::string> words;   // ranked by mean similarity, descending
  std::vector<double> means;        // parallel
  std::vector<std::uint64_t> freqs; // parallel
  SummaryStats summary;
};

// Mean cosine similarity between each content word (embedded alone as
// bos+word+eos) and the images whose long caption contains it; words with
// fewer than min_freq occurrences are dropped.
WordSimStats word_image_similarity(const enc::ModelParams& params,
                                   const text::Vocabulary& vocab,
                                   const worlds::Dataset& data,
                                   std::uint64_t min_freq = 20);

void write_wordsim_csv(std::ostream& out, const WordSimStats& stats);
void write_wordsim_summary(std::ostream& out, const WordSimStats& stats);

}  // namespace sclab::eval
