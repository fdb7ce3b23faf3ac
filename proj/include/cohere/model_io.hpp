#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "cohere/corpus.hpp"
#include "cohere/embeddings.hpp"
#include "cohere/position_model.hpp"

namespace cohere {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Model file layout (all integers little-endian):
///
///   8 bytes   magic "PPDMODEL"
///   u32       format version
///   u32       header length N
///   N bytes   header JSON: config, vocab_hash, vector_dim, vocab, parameter_count
///   u64       parameter count P
///   P x f32   parameters in PositionModel block order
///   u64       FNV-1a of every preceding byte
struct LoadedModel {
  PositionModel model;
  Vocab vocab;
  std::uint64_t vocab_hash = 0;
  std::size_t vector_dim = 0;

  const ModelConfig& config() const { return model.config(); }
};

std::string serialize_model(const PositionModel& model, const Vocab& vocab, std::size_t vector_dim);

/// Throws FormatError (not a model file), ChecksumMismatch (corrupted) or
/// VersionMismatch (unknown version, or a declared configuration that does
/// not match the stored parameters).
LoadedModel deserialize_model(std::string_view bytes);

void save_model(const PositionModel& model, const Vocab& vocab, std::size_t vector_dim, const std::string& path);
LoadedModel load_model(const std::string& path);

/// FNV-1a of a file's bytes, for registry bookkeeping.
std::uint64_t file_checksum(const std::string& path);

/// Throws VersionMismatch when the store's dimension disagrees with the model.
void check_compatible(const LoadedModel& loaded, const VectorStore& store);

}  // namespace cohere
