#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kprobe/treebank.hpp"

namespace kprobe {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Contextual vectors of one sentence, one row per word in token order.
struct SentenceEmbedding {
  std::string sentence_id;
  FloatMatrix matrix;
};

struct EmbeddingStore {
  int d1 = 0;
  std::string model_tag;
  std::vector<SentenceEmbedding> records;
};

/// Malformed or unreadable KPEB data. `offset` is the byte position where
/// reading failed.
class StoreFormatError : public std::runtime_error {
 public:
  StoreFormatError(std::uint64_t offset, const std::string& what)
      : std::runtime_error("KPEB byte offset " + std::to_string(offset) + ": " + what),
        offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

inline constexpr std::uint32_t kStoreVersion = 1;

/// Throws std::invalid_argument if records disagree on width, ids repeat,
/// or any entry is non-finite.
void check_store(const EmbeddingStore& store);

/// KPEB layout, all integers and floats little-endian:
///   "KPEB" | u32 version | u32 meta_len | meta JSON {d1, model_tag, record_count}
///   per record: u16 id_len | id bytes | u32 n | n*d1 f32 row-major
std::size_t write_store(const EmbeddingStore& store, std::ostream& sink);
EmbeddingStore read_store(std::istream& source);

void save_store(const EmbeddingStore& store, const std::string& path);
EmbeddingStore load_store(const std::string& path);

struct AlignedSentence {
  const Sentence* sentence;
  const SentenceEmbedding* embedding;
};

/// Pairs sentences with store records by id, in treebank order. Sentences
/// missing from the store are dropped; a row/token count mismatch throws.
std::vector<AlignedSentence> align(const EmbeddingStore& store, const std::vector<Sentence>& sentences);

/// Builds word vectors whose squared Euclidean distances equal tree
/// distances: each non-root token owns one orthonormal edge direction, a word
/// is the sum of the edge directions on its path to the root, and the result
/// is rotated by a seed-determined orthogonal matrix shared by all sentences.
class SyntheticEmbedder {
 public:
  SyntheticEmbedder(int d1, double noise_sigma, std::uint64_t seed);

  SentenceEmbedding embed(const Sentence& s) const;

  int d1() const { return d1_; }

 private:
  int d1_;
  double noise_sigma_;
  std::uint64_t seed_;
  Eigen::MatrixXd rotation_;
};

SentenceEmbedding synth_tree_embeddings(const Sentence& s, int d1, double noise_sigma, std::uint64_t seed);

}  // namespace kprobe
