#include "cohere/embeddings.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>

#include "cohere/errors.hpp"

namespace cohere {

namespace {

std::string fold_case(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

bool VectorStore::add(std::string_view token, std::span<const float> values) {
  if (dim_ == 0) dim_ = values.size();
  if (values.size() != dim_) {
    throw FormatError("vector for '" + std::string(token) + "' has dimension " + std::to_string(values.size()) +
                      ", expected " + std::to_string(dim_));
  }
  auto [it, inserted] = index_.emplace(fold_case(token), index_.size());
  if (!inserted) return false;
  data_.insert(data_.end(), values.begin(), values.end());
  return true;
}

bool VectorStore::contains(std::string_view token) const { return index_.contains(std::string(token)); }

std::optional<std::span<const float>> VectorStore::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return std::span<const float>(data_.data() + it->second * dim_, dim_);
}

void VectorStore::restrict_word_level(const Vocab& vocab) { restriction_ = vocab; }

VectorStore load_vectors(const std::string& path, const Vocab* restrict_to) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  VectorStore store;
  std::string line;
  std::size_t line_no = 0;
  std::size_t declared_dim = 0;
  std::vector<float> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = split_spaces(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2) {
      std::size_t count = 0;
      if (parse_number(fields[0], count) && parse_number(fields[1], declared_dim)) continue;
      declared_dim = 0;
    }
    const std::size_t dim = fields.size() - 1;
    if (dim == 0) throw FormatError(path + ":" + std::to_string(line_no) + ": token without values");
    const std::size_t expected = declared_dim != 0 ? declared_dim : store.dim();
    if (expected != 0 && dim != expected) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": dimension " + std::to_string(dim) +
                        " does not match " + std::to_string(expected));
    }
    values.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      if (!parse_number(fields[k + 1], values[k])) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" + std::string(fields[k + 1]) +
                          "'");
      }
    }
    store.add(fields[0], values);
  }
  if (store.size() == 0) throw FormatError(path + ": no vectors found");
  if (restrict_to != nullptr) store.restrict_word_level(*restrict_to);
  return store;
}

void save_vectors(const VectorStore& store, std::span<const std::string> tokens, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << tokens.size() << ' ' << store.dim() << '\n';
  char buf[64];
  for (const auto& token : tokens) {
    auto v = store.find(token);
    if (!v) throw std::invalid_argument("token '" + token + "' not in store");
    out << token;
    for (float x : *v) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

std::size_t EncodedSentence::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<float> doc_average(const Document& doc, const VectorStore& store) {
  std::map<std::string_view, std::size_t> counts;
  for (const auto& s : doc.sentences) {
    for (const auto& t : s.tokens) {
      if (store.contains(t)) ++counts[t];
    }
  }
  std::vector<double> sum(store.dim(), 0.0);
  std::size_t total = 0;
  for (const auto& [token, count] : counts) {
    const auto v = *store.find(token);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += static_cast<double>(count) * v[k];
    total += count;
  }
  std::vector<float> avg(store.dim(), 0.0f);
  if (total == 0) return avg;
  for (std::size_t k = 0; k < avg.size(); ++k) avg[k] = static_cast<float>(sum[k] / static_cast<double>(total));
  return avg;
}

namespace {

void write_encoding(std::string_view token, std::span<const float> doc_avg, const VectorStore& store,
                    const Vocab& vocab, float* out) {
  const std::size_t d = doc_avg.size();
  std::optional<std::span<const float>> word;
  const auto& restriction = store.word_level_restriction();
  if (vocab.contains(token) && (!restriction || restriction->contains(token))) word = store.find(token);
  for (std::size_t k = 0; k < d; ++k) {
    const float w = word ? (*word)[k] : 0.0f;
    out[k] = w;
    out[d + k] = doc_avg[k];
    out[2 * d + k] = w - doc_avg[k];
  }
}

}  // namespace

TokenEncoding encode_token(std::string_view token, std::span<const float> doc_avg, const VectorStore& store,
                           const Vocab& vocab) {
  if (doc_avg.size() != store.dim()) throw std::invalid_argument("document average has wrong dimension");
  TokenEncoding enc(3 * doc_avg.size());
  write_encoding(token, doc_avg, store, vocab, enc.data());
  return enc;
}

EncodedSentence encode_sentence(const Sentence& sentence, std::span<const float> doc_avg, const VectorStore& store,
                                const Vocab& vocab, std::size_t l_max) {
  if (l_max < 1) throw std::invalid_argument("l_max must be >= 1");
  if (doc_avg.size() != store.dim()) throw std::invalid_argument("document average has wrong dimension");
  EncodedSentence enc;
  enc.features = FeatureMatrix::Zero(static_cast<Eigen::Index>(l_max), static_cast<Eigen::Index>(3 * store.dim()));
  enc.mask.assign(l_max, 0);
  const std::size_t n = std::min(l_max, sentence.tokens.size());
  for (std::size_t t = 0; t < n; ++t) {
    write_encoding(sentence.tokens[t], doc_avg, store, vocab, enc.features.row(static_cast<Eigen::Index>(t)).data());
    enc.mask[t] = 1;
  }
  return enc;
}

std::vector<EncodedSentence> encode_document(const Document& doc, const VectorStore& store, const Vocab& vocab,
                                             std::size_t l_max) {
  const auto avg = doc_average(doc, store);
  std::vector<EncodedSentence> out;
  out.reserve(doc.size());
  for (const auto& s : doc.sentences) out.push_back(encode_sentence(s, avg, store, vocab, l_max));
  return out;
}

}  // namespace cohere
