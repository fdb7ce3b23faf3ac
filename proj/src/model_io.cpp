#include "cohere/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cohere/errors.hpp"
#include "cohere/hash.hpp"

namespace cohere {

namespace {

constexpr std::string_view kMagic = "PPDMODEL";

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError("model file truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return value;
}

std::uint64_t checksum(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.digest();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string serialize_model(const PositionModel& model, const Vocab& vocab, std::size_t vector_dim) {
  nlohmann::json header{{"config", model.config().to_json()},
                        {"vocab_hash", to_hex(vocab.hash())},
                        {"vector_dim", vector_dim},
                        {"vocab", {{"max_size", vocab.max_size()}, {"tokens", vocab.tokens()}}},
                        {"parameter_count", model.parameter_count()}};
  const std::string header_text = header.dump();
  std::string out(kMagic);
  put_le<std::uint32_t>(out, kModelFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  put_le<std::uint64_t>(out, model.parameter_count());
  for (double p : model.parameters()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(p)));
  put_le<std::uint64_t>(out, checksum(out));
  return out;
}

LoadedModel deserialize_model(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 16 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("not a position model file");
  }
  std::size_t tail = bytes.size() - 8;
  const auto stored_sum = get_le<std::uint64_t>(bytes, tail);
  if (stored_sum != checksum(bytes.substr(0, bytes.size() - 8))) throw ChecksumMismatch("model file checksum mismatch");

  std::size_t pos = kMagic.size();
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kModelFormatVersion) {
    throw VersionMismatch("model format version " + std::to_string(version) + ", expected " +
                          std::to_string(kModelFormatVersion));
  }
  const auto header_len = get_le<std::uint32_t>(bytes, pos);
  if (pos + header_len > bytes.size() - 8) throw FormatError("model header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model header: ") + e.what());
  }
  pos += header_len;

  LoadedModel loaded;
  ModelConfig config;
  try {
    config = ModelConfig::from_json(header.at("config"));
    loaded.vector_dim = header.at("vector_dim").get<std::size_t>();
    loaded.vocab = Vocab(header.at("vocab").at("tokens").get<std::vector<std::string>>(),
                         header.at("vocab").at("max_size").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model header: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw VersionMismatch(std::string("model header declares an invalid configuration: ") + e.what());
  }
  loaded.vocab_hash = loaded.vocab.hash();
  if (header.value("vocab_hash", std::string()) != to_hex(loaded.vocab_hash)) {
    throw ChecksumMismatch("vocabulary does not match its recorded hash");
  }

  PositionModel model(config);
  const auto count = get_le<std::uint64_t>(bytes, pos);
  if (count != model.parameter_count() || header.value("parameter_count", std::uint64_t{0}) != count) {
    throw VersionMismatch("declared configuration implies " + std::to_string(model.parameter_count()) +
                          " parameters but the file stores " + std::to_string(count));
  }
  if (pos + count * 4 != bytes.size() - 8) throw FormatError("parameter payload has the wrong size");
  auto params = model.parameters();
  for (std::size_t k = 0; k < count; ++k) {
    params[k] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos)));
  }
  loaded.model = std::move(model);
  return loaded;
}

void save_model(const PositionModel& model, const Vocab& vocab, std::size_t vector_dim, const std::string& path) {
  const auto bytes = serialize_model(model, vocab, vector_dim);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

LoadedModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

std::uint64_t file_checksum(const std::string& path) { return checksum(read_file(path)); }

void check_compatible(const LoadedModel& loaded, const VectorStore& store) {
  if (store.dim() != loaded.vector_dim || 3 * store.dim() != static_cast<std::size_t>(loaded.config().input_dim)) {
    throw VersionMismatch("vector store has dimension " + std::to_string(store.dim()) + ", model expects " +
                          std::to_string(loaded.vector_dim));
  }
}

}  // namespace cohere
