#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sclab/common.hpp"

namespace sclab::text {

// Lowercase word-level vocabulary with pad/bos/eos in the first three slots.
struct Vocabulary {
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, std::size_t> token_to_id;

  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;

  std::size_t size() const { return id_to_token.size(); }
  bool is_special(std::size_t id) const { return id < 3; }
  std::size_t lookup(std::string_view token) const;  // size() when unknown
};

struct TokenIds {
  std::vector<std::size_t> ids;  // bos ... eos
  std::size_t source_len = 0;    // caption byte length
  std::size_t dropped = 0;       // unknown words silently dropped
};

struct KHotLabel {
  std::vector<std::size_t> active;  // sorted, specials excluded
  std::size_t vocab_size = 0;
};

struct DfTable {
  std::unordered_map<std::size_t, std::uint64_t> df;
  std::uint64_t corpus_size = 0;

  std::uint64_t count(std::size_t id) const {
    auto it = df.find(id);
    return it == df.end() ? 0 : it->second;
  }
};

// w_c = ln(|D| / (1 + df(c))), clamped at 0 for ubiquitous tokens.
struct IdfTable {
  std::unordered_map<std::size_t, double> w;
  std::uint64_t corpus_size = 0;

  double weight(std::size_t id) const;  // unseen tokens get ln(|D|)
};

struct LabelDistribution {
  std::vector<std::size_t> support;  // sorted token ids
  std::vector<double> probs;         // parallel, sums to 1
  bool uniform_fallback = false;     // all active weights were 0
};

// A caption matches when every group has at least one alternative present
// as a case-insensitive word.
struct CooccurrenceQuery {
  std::vector<std::vector<std::string>> groups;
};

struct CooccurrenceResult {
  std::uint64_t matches = 0;
  std::uint64_t corpus_size = 0;
  double percentage = 0.0;
};

// Lowercased alphanumeric word split, shared by every text consumer.
std::vector<std::string> split_words(std::string_view caption);

Vocabulary build_vocab(const std::vector<std::string>& corpus,
                       std::size_t max_size, std::size_t min_freq = 1);

TokenIds tokenize(std::string_view caption, const Vocabulary& vocab,
                  std::size_t max_seq_len = 77);

KHotLabel khot(const TokenIds& tokens, const Vocabulary& vocab);

DfTable document_frequency(const std::vector<std::string>& corpus,
                           const Vocabulary& vocab);

IdfTable idf_weights(const DfTable& df);

LabelDistribution label_distribution(const KHotLabel& label, const IdfTable& idf);

bool caption_matches(std::string_view caption, const CooccurrenceQuery& query);
CooccurrenceResult cooccurrence_count(const std::vector<std::string>& corpus,
                                      const CooccurrenceQuery& query);

// One group per line, alternatives separated by '|'. Blank lines skipped.
CooccurrenceQuery parse_query(std::istream& in);
CooccurrenceQuery parse_query_file(const std::string& path);

// Sharded scans; result is identical to a single pass over the
// concatenation, independent of shard order.
std::vector<std::string> read_caption_shard(const std::string& path);
DfTable merge_df(const DfTable& a, const DfTable& b);
DfTable df_sharded(const std::vector<std::string>& shard_paths,
                   const Vocabulary& vocab);
CooccurrenceResult cooccurrence_sharded(const std::vector<std::string>& shard_paths,
                                        const CooccurrenceQuery& query);

// One token per line in id order, specials included.
void save_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::string& path);

// CSV export `token_id,token,df,idf` sorted by id.
void write_df_idf_csv(std::ostream& out, const Vocabulary& vocab,
                      const DfTable& df, const IdfTable& idf);

}  // namespace sclab::text
