#include "kprobe/embeddings.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/QR>
#include <json.hpp>

#include "kprobe/random.hpp"

namespace kprobe {

namespace {

constexpr std::array<char, 4> kMagic = {'K', 'P', 'E', 'B'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw std::runtime_error("KPEB write failed after " + std::to_string(count_) + " bytes");
    count_ += n;
  }

  template <typename T>
  void scalar(T v) {
    const T le = to_little(v);
    bytes(&le, sizeof(T));
  }

  std::size_t count() const { return count_; }

 private:
  std::ostream& out_;
  std::size_t count_ = 0;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* data, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw StoreFormatError(offset_ + static_cast<std::uint64_t>(in_.gcount()),
                             std::string("truncated ") + what);
    }
    offset_ += n;
  }

  template <typename T>
  T scalar(const char* what) {
    T v;
    bytes(&v, sizeof(T), what);
    return to_little(v);
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void check_store(const EmbeddingStore& store) {
  if (store.d1 < 1) throw std::invalid_argument("embedding width d1 must be positive");
  std::unordered_set<std::string> seen;
  for (const auto& r : store.records) {
    if (r.matrix.cols() != store.d1) {
      throw std::invalid_argument("record '" + r.sentence_id + "' has width " +
                                  std::to_string(r.matrix.cols()) + ", store d1 is " +
                                  std::to_string(store.d1));
    }
    if (!seen.insert(r.sentence_id).second) {
      throw std::invalid_argument("duplicate sentence id '" + r.sentence_id + "'");
    }
    if (!r.matrix.allFinite()) {
      throw std::invalid_argument("record '" + r.sentence_id + "' has non-finite entries");
    }
    if (r.sentence_id.size() > 0xFFFF) {
      throw std::invalid_argument("sentence id longer than 65535 bytes");
    }
  }
}

std::size_t write_store(const EmbeddingStore& store, std::ostream& sink) {
  check_store(store);
  Writer w(sink);
  w.bytes(kMagic.data(), kMagic.size());
  w.scalar<std::uint32_t>(kStoreVersion);

  nlohmann::json meta;
  meta["d1"] = store.d1;
  meta["model_tag"] = store.model_tag;
  meta["record_count"] = store.records.size();
  const std::string meta_text = meta.dump();
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(meta_text.size()));
  w.bytes(meta_text.data(), meta_text.size());

  for (const auto& r : store.records) {
    w.scalar<std::uint16_t>(static_cast<std::uint16_t>(r.sentence_id.size()));
    w.bytes(r.sentence_id.data(), r.sentence_id.size());
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(r.matrix.rows()));
    if constexpr (std::endian::native == std::endian::little) {
      w.bytes(r.matrix.data(), sizeof(float) * static_cast<std::size_t>(r.matrix.size()));
    } else {
      for (Eigen::Index k = 0; k < r.matrix.size(); ++k) w.scalar<float>(r.matrix.data()[k]);
    }
  }
  return w.count();
}

EmbeddingStore read_store(std::istream& source) {
  Reader r(source);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw StoreFormatError(0, "bad magic, not a KPEB file");
  const auto version_at = r.offset();
  const auto version = r.scalar<std::uint32_t>("version");
  if (version != kStoreVersion) {
    throw StoreFormatError(version_at, "unsupported version " + std::to_string(version));
  }
  const auto meta_len = r.scalar<std::uint32_t>("metadata length");
  const auto meta_at = r.offset();
  std::string meta_text(meta_len, '\0');
  r.bytes(meta_text.data(), meta_len, "metadata");

  EmbeddingStore store;
  std::uint64_t record_count = 0;
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    store.d1 = meta.at("d1").get<int>();
    store.model_tag = meta.value("model_tag", std::string{});
    record_count = meta.at("record_count").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw StoreFormatError(meta_at, std::string("bad metadata: ") + e.what());
  }
  if (store.d1 < 1) throw StoreFormatError(meta_at, "metadata d1 must be positive");

  store.records.reserve(record_count);
  for (std::uint64_t k = 0; k < record_count; ++k) {
    SentenceEmbedding rec;
    const auto id_len = r.scalar<std::uint16_t>("record id length");
    rec.sentence_id.resize(id_len);
    r.bytes(rec.sentence_id.data(), id_len, "record id");
    const auto n = r.scalar<std::uint32_t>("record row count");
    rec.matrix.resize(n, store.d1);
    const auto payload_at = r.offset();
    r.bytes(rec.matrix.data(), sizeof(float) * static_cast<std::size_t>(rec.matrix.size()), "record payload");
    for (Eigen::Index e = 0; e < rec.matrix.size(); ++e) {
      float& v = rec.matrix.data()[e];
      v = to_little(v);
      if (!std::isfinite(v)) {
        throw StoreFormatError(payload_at + sizeof(float) * static_cast<std::uint64_t>(e),
                               "non-finite value in record '" + rec.sentence_id + "'");
      }
    }
    store.records.push_back(std::move(rec));
  }
  return store;
}

void save_store(const EmbeddingStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_store(store, out);
}

EmbeddingStore load_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding store '" + path + "'");
  return read_store(in);
}

std::vector<AlignedSentence> align(const EmbeddingStore& store, const std::vector<Sentence>& sentences) {
  std::unordered_map<std::string_view, const SentenceEmbedding*> by_id;
  by_id.reserve(store.records.size());
  for (const auto& r : store.records) by_id.emplace(r.sentence_id, &r);

  std::vector<AlignedSentence> out;
  for (const auto& s : sentences) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) continue;
    if (static_cast<std::size_t>(it->second->matrix.rows()) != s.size()) {
      throw std::invalid_argument("sentence '" + s.id + "' has " + std::to_string(s.size()) +
                                  " tokens but its embedding has " +
                                  std::to_string(it->second->matrix.rows()) + " rows");
    }
    out.push_back({&s, it->second});
  }
  return out;
}

SyntheticEmbedder::SyntheticEmbedder(int d1, double noise_sigma, std::uint64_t seed)
    : d1_(d1), noise_sigma_(noise_sigma), seed_(seed) {
  if (d1 < 1) throw std::invalid_argument("d1 must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be nonnegative");
  Rng rng(seed);
  Eigen::MatrixXd gauss(d1, d1);
  for (Eigen::Index j = 0; j < d1; ++j)
    for (Eigen::Index i = 0; i < d1; ++i) gauss(i, j) = rng.normal();
  rotation_ = Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ();
}

SentenceEmbedding SyntheticEmbedder::embed(const Sentence& s) const {
  check_tree(s);
  const int n = static_cast<int>(s.size());
  if (d1_ < n - 1) {
    throw std::invalid_argument("d1 = " + std::to_string(d1_) + " cannot hold the " +
                                std::to_string(n - 1) + " edges of sentence '" + s.id + "'");
  }
  // Edge of token k (to its head) gets direction slot edge_slot[k].
  std::vector<int> edge_slot(n, -1);
  int next = 0;
  for (int k = 0; k < n; ++k)
    if (s.tokens[k].head >= 1) edge_slot[k] = next++;

  Eigen::MatrixXd words = Eigen::MatrixXd::Zero(n, d1_);
  for (int k = 0; k < n; ++k) {
    for (int cur = k; s.tokens[cur].head >= 1; cur = s.tokens[cur].head - 1) {
      words(k, edge_slot[cur]) += 1.0;
    }
  }
  Eigen::MatrixXd rotated = words * rotation_.transpose();
  if (noise_sigma_ > 0.0) {
    Rng rng(seed_ ^ fnv1a(s.id));
    for (Eigen::Index i = 0; i < rotated.rows(); ++i)
      for (Eigen::Index j = 0; j < rotated.cols(); ++j) rotated(i, j) += noise_sigma_ * rng.normal();
  }
  return SentenceEmbedding{s.id, rotated.cast<float>()};
}

SentenceEmbedding synth_tree_embeddings(const Sentence& s, int d1, double noise_sigma, std::uint64_t seed) {
  return SyntheticEmbedder(d1, noise_sigma, seed).embed(s);
}

}  // namespace kprobe
