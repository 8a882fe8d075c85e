#include "sclab/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

namespace sclab::text {

std::vector<std::string> split_words(std::string_view caption) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : caption) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::size_t Vocabulary::lookup(std::string_view token) const {
  auto it = token_to_id.find(std::string(token));
  return it == token_to_id.end() ? size() : it->second;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus,
                       std::size_t max_size, std::size_t min_freq) {
  if (corpus.empty()) throw DomainError("build_vocab: empty corpus");
  check(max_size >= 4, "build_vocab: max_size must leave room for specials");

  std::unordered_map<std::string, std::uint64_t> freq;
  for (const auto& caption : corpus)
    for (auto& w : split_words(caption)) ++freq[w];

  // Frequency descending, lexicographic ascending on ties.
  std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.id_to_token = {"<pad>", "<bos>", "<eos>"};
  for (const auto& [token, count] : ranked) {
    if (count < min_freq) continue;
    if (v.id_to_token.size() >= max_size) break;
    v.id_to_token.push_back(token);
  }
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

TokenIds tokenize(std::string_view caption, const Vocabulary& vocab,
                  std::size_t max_seq_len) {
  check(max_seq_len >= 2, "tokenize: max_seq_len must fit bos and eos");
  TokenIds out;
  out.source_len = caption.size();
  out.ids.push_back(Vocabulary::kBos);
  for (const auto& w : split_words(caption)) {
    const std::size_t id = vocab.lookup(w);
    if (id == vocab.size())
      ++out.dropped;
    else
      out.ids.push_back(id);
  }
  out.ids.push_back(Vocabulary::kEos);
  if (out.ids.size() > max_seq_len) {
    out.ids.resize(max_seq_len);
    out.ids.back() = Vocabulary::kEos;
  }
  return out;
}

KHotLabel khot(const TokenIds& tokens, const Vocabulary& vocab) {
  std::unordered_set<std::size_t> set;
  for (std::size_t id : tokens.ids)
    if (!vocab.is_special(id)) set.insert(id);
  KHotLabel label;
  label.vocab_size = vocab.size();
  label.active.assign(set.begin(), set.end());
  std::sort(label.active.begin(), label.active.end());
  return label;
}

DfTable document_frequency(const std::vector<std::string>& corpus,
                           const Vocabulary& vocab) {
  DfTable table;
  for (const auto& caption : corpus) {
    ++table.corpus_size;
    std::unordered_set<std::size_t> seen;
    for (const auto& w : split_words(caption)) {
      const std::size_t id = vocab.lookup(w);
      if (id != vocab.size() && !vocab.is_special(id)) seen.insert(id);
    }
    for (std::size_t id : seen) ++table.df[id];
  }
  return table;
}

double IdfTable::weight(std::size_t id) const {
  auto it = w.find(id);
  if (it != w.end()) return it->second;
  if (corpus_size == 0) return 0.0;
  return std::log(static_cast<double>(corpus_size));  // df = 0
}

IdfTable idf_weights(const DfTable& df) {
  if (df.corpus_size == 0) throw DomainError("idf_weights: empty corpus");
  IdfTable idf;
  idf.corpus_size = df.corpus_size;
  for (const auto& [id, count] : df.df) {
    const double raw = std::log(static_cast<double>(df.corpus_size) /
                                (1.0 + static_cast<double>(count)));
    idf.w[id] = std::max(0.0, raw);
  }
  return idf;
}

LabelDistribution label_distribution(const KHotLabel& label, const IdfTable& idf) {
  if (label.active.empty())
    throw DomainError("label_distribution: empty active set");
  LabelDistribution dist;
  double total = 0.0;
  std::vector<double> weights;
  weights.reserve(label.active.size());
  for (std::size_t id : label.active) {
    const double w = idf.weight(id);
    weights.push_back(w);
    total += w;
  }
  if (total <= 0.0) {
    // All active tokens are ubiquitous; fall back to uniform.
    dist.uniform_fallback = true;
    dist.support = label.active;
    dist.probs.assign(label.active.size(),
                      1.0 / static_cast<double>(label.active.size()));
    return dist;
  }
  for (std::size_t i = 0; i < label.active.size(); ++i) {
    if (weights[i] <= 0.0) continue;  // zero-weight tokens leave the support
    dist.support.push_back(label.active[i]);
    dist.probs.push_back(weights[i] / total);
  }
  return dist;
}

bool caption_matches(std::string_view caption, const CooccurrenceQuery& query) {
  const auto words = split_words(caption);
  std::unordered_set<std::string_view> set(words.begin(), words.end());
  for (const auto& group : query.groups) {
    bool any = false;
    for (const auto& alt : group) {
      if (set.count(alt)) {
        any = true;
        break;
      }
    }
    if (!any) return false;
  }
  return true;
}

CooccurrenceResult cooccurrence_count(const std::vector<std::string>& corpus,
                                      const CooccurrenceQuery& query) {
  check(!query.groups.empty(), "cooccurrence: query needs at least one group");
  CooccurrenceResult r;
  r.corpus_size = corpus.size();
  for (const auto& caption : corpus)
    if (caption_matches(caption, query)) ++r.matches;
  r.percentage = r.corpus_size == 0
                     ? 0.0
                     : 100.0 * static_cast<double>(r.matches) /
                           static_cast<double>(r.corpus_size);
  return r;
}

CooccurrenceQuery parse_query(std::istream& in) {
  CooccurrenceQuery q;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> group;
    std::string alt;
    std::stringstream ss(line);
    while (std::getline(ss, alt, '|')) {
      auto words = split_words(alt);
      if (words.size() > 1)
        throw ParseError("query line " + std::to_string(lineno) +
                         ": alternative '" + alt + "' is not a single word");
      if (!words.empty()) group.push_back(words[0]);
    }
    if (!group.empty()) q.groups.push_back(std::move(group));
  }
  if (q.groups.empty()) throw ParseError("query: no keyword groups");
  return q;
}

CooccurrenceQuery parse_query_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open query file: " + path);
  return parse_query(f);
}

std::vector<std::string> read_caption_shard(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open corpus shard: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

DfTable merge_df(const DfTable& a, const DfTable& b) {
  DfTable out = a;
  out.corpus_size += b.corpus_size;
  for (const auto& [id, count] : b.df) out.df[id] += count;
  return out;
}

DfTable df_sharded(const std::vector<std::string>& shard_paths,
                   const Vocabulary& vocab) {
  std::vector<DfTable> partial(shard_paths.size());
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(shard_paths.size()); ++i) {
    try {
      partial[i] = document_frequency(read_caption_shard(shard_paths[i]), vocab);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  DfTable merged;
  for (const auto& p : partial) merged = merge_df(merged, p);
  return merged;
}

CooccurrenceResult cooccurrence_sharded(const std::vector<std::string>& shard_paths,
                                        const CooccurrenceQuery& query) {
  std::vector<CooccurrenceResult> partial(shard_paths.size());
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(shard_paths.size()); ++i) {
    try {
      partial[i] = cooccurrence_count(read_caption_shard(shard_paths[i]), query);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  CooccurrenceResult r;
  for (const auto& p : partial) {
    r.matches += p.matches;
    r.corpus_size += p.corpus_size;
  }
  r.percentage = r.corpus_size == 0
                     ? 0.0
                     : 100.0 * static_cast<double>(r.matches) /
                           static_cast<double>(r.corpus_size);
  return r;
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write vocab: " + path);
  for (const auto& tok : vocab.id_to_token) f << tok << '\n';
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open vocab: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    v.token_to_id[line] = v.id_to_token.size();
    v.id_to_token.push_back(line);
  }
  check(v.size() >= 3 && v.id_to_token[0] == "<pad>" &&
            v.id_to_token[1] == "<bos>" && v.id_to_token[2] == "<eos>",
        "vocab file missing special tokens: " + path);
  return v;
}

void write_df_idf_csv(std::ostream& out, const Vocabulary& vocab,
                      const DfTable& df, const IdfTable& idf) {
  out << "token_id,token,df,idf\n";
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (vocab.is_special(id)) continue;
    out << id << ',' << vocab.id_to_token[id] << ',' << df.count(id) << ','
        << idf.weight(id) << '\n';
  }
}

}  // namespace sclab::text
