#include "cohere/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "cohere/errors.hpp"
#include "cohere/hash.hpp"

namespace cohere {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }
bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }
bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }
bool is_opener(char c) { return c == '"' || c == '\'' || c == '(' || c == '['; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void tokenize_chunk(std::string_view chunk, std::vector<std::string>& out) {
  std::size_t begin = 0;
  while (begin < chunk.size() && is_punct(chunk[begin])) {
    out.emplace_back(1, chunk[begin]);
    ++begin;
  }
  std::size_t end = chunk.size();
  std::vector<std::string> trailing;
  while (end > begin && is_punct(chunk[end - 1])) {
    if (chunk[end - 1] == '.' && chunk.substr(begin, end - 1 - begin).find('.') != std::string_view::npos) {
      break;
    }
    trailing.emplace_back(1, chunk[end - 1]);
    --end;
  }
  if (end > begin) out.push_back(lowercase(chunk.substr(begin, end - begin)));
  out.insert(out.end(), trailing.rbegin(), trailing.rend());
}

// Chunk of non-space characters that ends right before `end`.
std::string_view chunk_before(std::string_view text, std::size_t end) {
  std::size_t begin = end;
  while (begin > 0 && !is_space(text[begin - 1])) --begin;
  return text.substr(begin, end - begin);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::uint64_t saturating_factorial(std::size_t n) {
  std::uint64_t f = 1;
  for (std::size_t i = 2; i <= n; ++i) {
    if (f > std::numeric_limits<std::uint64_t>::max() / i) return std::numeric_limits<std::uint64_t>::max();
    f *= i;
  }
  return f;
}

bool is_identity(const std::vector<std::size_t>& perm) {
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] != i) return false;
  }
  return true;
}

}  // namespace

Document Document::from_sentences(std::string id, const std::vector<std::string>& texts,
                                  std::map<std::string, std::string> meta) {
  Document doc;
  doc.id = std::move(id);
  doc.meta = std::move(meta);
  for (const auto& text : texts) {
    auto tokens = tokenize(text);
    if (tokens.empty()) continue;
    doc.sentences.push_back({doc.sentences.size(), std::string(trim(text)), std::move(tokens)});
  }
  return doc;
}

Document Document::permuted(std::span<const std::size_t> order) const {
  if (order.size() != sentences.size() || !is_permutation_of_range(order)) {
    throw std::invalid_argument("permutation does not match document " + id);
  }
  Document out;
  out.id = id;
  out.meta = meta;
  out.sentences.reserve(sentences.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    Sentence s = sentences[order[k]];
    s.index = k;
    out.sentences.push_back(std::move(s));
  }
  return out;
}

std::vector<Sentence> segment_sentences(std::string_view raw_text, const SegmenterOptions& options) {
  const std::unordered_set<std::string_view> abbreviations(options.abbreviations.begin(),
                                                           options.abbreviations.end());
  std::vector<std::string_view> pieces;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < raw_text.size()) {
    if (!is_terminator(raw_text[i])) {
      ++i;
      continue;
    }
    std::size_t term_end = i;
    while (term_end < raw_text.size() && is_terminator(raw_text[term_end])) ++term_end;
    std::size_t after = term_end;
    while (after < raw_text.size() && is_closer(raw_text[after])) ++after;
    std::size_t next = after;
    while (next < raw_text.size() && is_space(raw_text[next])) ++next;
    std::size_t head = next;
    if (head < raw_text.size() && is_opener(raw_text[head])) ++head;
    const bool breaks = next > after && head < raw_text.size() && is_upper(raw_text[head]) &&
                        !abbreviations.contains(chunk_before(raw_text, term_end));
    if (breaks) {
      pieces.push_back(raw_text.substr(start, after - start));
      start = next;
    }
    i = term_end;
  }
  if (start < raw_text.size()) pieces.push_back(raw_text.substr(start));

  std::vector<Sentence> sentences;
  for (auto piece : pieces) {
    piece = trim(piece);
    if (piece.empty()) continue;
    auto tokens = tokenize(piece);
    if (tokens.empty()) continue;
    sentences.push_back({sentences.size(), std::string(piece), std::move(tokens)});
  }
  if (sentences.empty()) throw EmptyDocument("no sentence found in text");
  return sentences;
}

std::vector<std::string> tokenize(std::string_view sentence_text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < sentence_text.size()) {
    while (i < sentence_text.size() && is_space(sentence_text[i])) ++i;
    std::size_t j = i;
    while (j < sentence_text.size() && !is_space(sentence_text[j])) ++j;
    if (j > i) tokenize_chunk(sentence_text.substr(i, j - i), tokens);
    i = j;
  }
  return tokens;
}

Vocab::Vocab(std::vector<std::string> tokens_by_rank, std::size_t max_size)
    : tokens_(std::move(tokens_by_rank)), max_size_(max_size) {
  if (tokens_.size() > max_size_) tokens_.resize(max_size_);
  for (std::size_t r = 0; r < tokens_.size(); ++r) ranks_.emplace(tokens_[r], r);
}

bool Vocab::contains(std::string_view token) const { return ranks_.contains(std::string(token)); }

std::optional<std::size_t> Vocab::rank(std::string_view token) const {
  auto it = ranks_.find(std::string(token));
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocab::hash() const {
  Fnv1a h;
  for (const auto& t : tokens_) {
    h.update(t);
    h.update("\n");
  }
  return h.digest();
}

Vocab build_vocab(std::span<const Document> train_docs, std::size_t max_size) {
  if (train_docs.empty()) throw std::invalid_argument("build_vocab: no training documents");
  if (max_size < 1) throw std::invalid_argument("build_vocab: max_size must be >= 1");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& doc : train_docs) {
    for (const auto& s : doc.sentences) {
      for (const auto& t : s.tokens) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(std::min(max_size, ranked.size()));
  for (std::size_t r = 0; r < ranked.size() && r < max_size; ++r) tokens.push_back(ranked[r].first);
  return Vocab(std::move(tokens), max_size);
}

int quantile_label(std::size_t sentence_index, std::size_t n_sentences, int q) {
  if (q < 2) throw InvalidIndex("quantile count must be >= 2");
  if (sentence_index >= n_sentences) {
    throw InvalidIndex("sentence index " + std::to_string(sentence_index) + " outside document of " +
                       std::to_string(n_sentences));
  }
  const auto label = sentence_index * static_cast<std::size_t>(q) / n_sentences;
  return static_cast<int>(std::min<std::size_t>(label, static_cast<std::size_t>(q - 1)));
}

std::vector<std::vector<std::size_t>> generate_permutations(std::size_t n, std::size_t k,
                                                            std::uint64_t seed) {
  if (n < 2) throw DegenerateDocument("need at least 2 sentences to permute");
  if (k < 1) throw std::invalid_argument("generate_permutations: k must be >= 1");
  const bool distinct = saturating_factorial(n) - 1 >= k;
  std::mt19937_64 rng(seed);
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::vector<std::size_t>> out;
  out.reserve(k);
  std::vector<std::size_t> perm(n);
  while (out.size() < k) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    if (is_identity(perm)) continue;
    if (distinct && !seen.insert(perm).second) continue;
    out.push_back(perm);
  }
  return out;
}

PermutationSet generate_permutations(const Document& doc, std::size_t k, std::uint64_t seed) {
  if (doc.size() < 2) throw DegenerateDocument("document '" + doc.id + "' has fewer than 2 sentences");
  return {doc.id, generate_permutations(doc.size(), k, seed), seed};
}

bool is_permutation_of_range(std::span<const std::size_t> perm) {
  std::vector<bool> hit(perm.size(), false);
  for (auto v : perm) {
    if (v >= perm.size() || hit[v]) return false;
    hit[v] = true;
  }
  return true;
}

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

CorpusSplit split_corpus(std::span<const Document> docs, double validation_fraction, double test_fraction,
                         std::uint64_t seed) {
  if (validation_fraction < 0 || test_fraction < 0 || validation_fraction + test_fraction > 1) {
    throw std::invalid_argument("split fractions must be non-negative and sum to at most 1");
  }
  std::vector<std::string> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.push_back(d.id);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = ids.size();
  const auto n_val = static_cast<std::size_t>(validation_fraction * static_cast<double>(n) + 0.5);
  const auto n_test = std::min(n - n_val, static_cast<std::size_t>(test_fraction * static_cast<double>(n) + 0.5));
  CorpusSplit split;
  split.validation.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val),
                    ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  split.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), ids.end());
  return split;
}

CorpusSplit split_by_meta(std::span<const Document> docs, const std::string& key,
                          const std::vector<std::string>& validation_values,
                          const std::vector<std::string>& test_values) {
  auto has = [](const std::vector<std::string>& values, const std::string& v) {
    return std::find(values.begin(), values.end(), v) != values.end();
  };
  CorpusSplit split;
  for (const auto& doc : docs) {
    auto it = doc.meta.find(key);
    const std::string value = it == doc.meta.end() ? std::string() : it->second;
    if (has(test_values, value)) {
      split.test.push_back(doc.id);
    } else if (has(validation_values, value)) {
      split.validation.push_back(doc.id);
    } else {
      split.train.push_back(doc.id);
    }
  }
  return split;
}

std::vector<Document> select_documents(std::span<const Document> docs, std::span<const std::string> ids) {
  std::unordered_map<std::string_view, const Document*> by_id;
  for (const auto& d : docs) by_id.emplace(d.id, &d);
  std::vector<Document> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw std::invalid_argument("unknown document id " + id);
    out.push_back(*it->second);
  }
  return out;
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "jsonl") return CorpusFormat::jsonl;
  if (name == "one_sentence_per_line" || name == "lines") return CorpusFormat::one_sentence_per_line;
  if (name == "raw_text_dir" || name == "dir") return CorpusFormat::raw_text_dir;
  throw FormatError("unknown corpus format '" + std::string(name) + "'");
}

namespace {

CorpusLoadResult load_jsonl(const std::string& path) {
  using nlohmann::json;
  CorpusLoadResult result;
  const auto lines = read_lines(path);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto& line = lines[ln];
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(ln + 1);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(where + ": invalid JSON: " + e.what());
    }
    if (!record.is_object()) throw FormatError(where + ": record is not an object");
    if (!record.contains("id") || !record["id"].is_string()) throw FormatError(where + ": missing string \"id\"");
    if (!record.contains("sentences") || !record["sentences"].is_array()) {
      throw FormatError(where + ": missing array \"sentences\"");
    }
    std::vector<std::string> texts;
    for (const auto& s : record["sentences"]) {
      if (!s.is_string()) throw FormatError(where + ": sentence is not a string");
      texts.push_back(s.get<std::string>());
    }
    std::map<std::string, std::string> meta;
    if (record.contains("meta")) {
      if (!record["meta"].is_object()) throw FormatError(where + ": \"meta\" is not an object");
      for (const auto& [k, v] : record["meta"].items()) meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    auto doc = Document::from_sentences(record["id"].get<std::string>(), texts, std::move(meta));
    if (doc.empty()) {
      result.skipped.push_back({ln + 1, path, "no non-empty sentences"});
      continue;
    }
    result.documents.push_back(std::move(doc));
  }
  return result;
}

CorpusLoadResult load_lines(const std::string& path) {
  CorpusLoadResult result;
  const auto lines = read_lines(path);
  std::vector<std::string> block;
  std::size_t block_start = 0;
  auto flush = [&] {
    if (block.empty()) return;
    auto doc = Document::from_sentences("doc-" + std::to_string(result.documents.size() + result.skipped.size()),
                                        block);
    if (doc.empty()) {
      result.skipped.push_back({block_start, path, "no non-empty sentences"});
    } else {
      result.documents.push_back(std::move(doc));
    }
    block.clear();
  };
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) {
      flush();
      continue;
    }
    if (block.empty()) block_start = ln + 1;
    block.push_back(lines[ln]);
  }
  flush();
  return result;
}

CorpusLoadResult load_dir(const std::string& path, const SegmenterOptions& segmenter) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(path, ec)) throw IoError(path + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  CorpusLoadResult result;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      Document doc;
      doc.id = file.stem().string();
      doc.sentences = segment_sentences(buf.str(), segmenter);
      result.documents.push_back(std::move(doc));
    } catch (const EmptyDocument&) {
      result.skipped.push_back({0, file.string(), "no sentence found"});
    }
  }
  return result;
}

}  // namespace

CorpusLoadResult load_corpus(const std::string& path, CorpusFormat format, const SegmenterOptions& segmenter) {
  switch (format) {
    case CorpusFormat::jsonl:
      return load_jsonl(path);
    case CorpusFormat::one_sentence_per_line:
      return load_lines(path);
    case CorpusFormat::raw_text_dir:
      return load_dir(path, segmenter);
  }
  throw FormatError("unknown corpus format");
}

void save_jsonl(std::span<const Document> docs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& doc : docs) {
    nlohmann::json sentences = nlohmann::json::array();
    for (const auto& s : doc.sentences) sentences.push_back(s.text);
    nlohmann::json record{{"id", doc.id}, {"sentences", sentences}, {"meta", doc.meta}};
    out << record.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace cohere
