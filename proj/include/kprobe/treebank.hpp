#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace kprobe {

struct Token {
  int index = 0;  // 1-based position in the sentence
  std::string form;
  std::string upos;
  int head = 0;  // 0 = root
};

struct Sentence {
  std::string id;
  std::vector<Token> tokens;

  std::size_t size() const { return tokens.size(); }
};

/// Pairwise path lengths between the words of a sentence (root excluded).
using DistanceMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Raised for malformed CoNLL-U input. Carries the sentence id and the
/// 1-based line number of the offending line.
class TreebankError : public std::runtime_error {
 public:
  TreebankError(std::string sentence_id, std::size_t line, const std::string& what);

  const std::string& sentence_id() const { return sentence_id_; }
  std::size_t line() const { return line_; }

 private:
  std::string sentence_id_;
  std::size_t line_;
};

/// Parses CoNLL-U text. Multiword ranges (`3-4`) and empty nodes (`5.1`) are
/// skipped. Sentences without a `# sent_id` comment get their 1-based
/// running position as id.
std::vector<Sentence> parse_conllu(std::string_view text);

std::vector<Sentence> read_conllu_file(const std::string& path);

/// Writes the retained columns (ID, FORM, UPOS, HEAD); all others become `_`.
std::string serialize_conllu(const std::vector<Sentence>& sentences);

/// Throws std::invalid_argument unless indices are 1..n and the head
/// relation is a single-rooted tree.
void check_tree(const Sentence& s);

/// Shortest-path lengths on the undirected graph with an edge (i, head_i)
/// for every token whose head is a word. Floyd-Warshall.
DistanceMatrix tree_distances(const Sentence& s);

class Rng;

/// Random recursive tree on n tokens with a random labeling: the first token
/// of a shuffled order is the root and each later token picks a uniformly
/// random earlier one as head. UPOS is "X", forms are "w1".."wn".
Sentence random_tree(Rng& rng, int n, std::string id);

struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> dev;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  std::size_t cap = 0;
};

/// Takes the first min(cap, |sentences|) sentences and partitions them
/// 80/10/10 into train/test/dev. With `shuffle`, the order is a seeded
/// permutation; otherwise file order is kept.
SplitSpec make_splits(const std::vector<Sentence>& sentences, std::size_t cap,
                      std::uint64_t seed, bool shuffle = true);

std::string split_to_json(const SplitSpec& split);
SplitSpec split_from_json(std::string_view text);

}  // namespace kprobe
