#include "kprobe/treebank.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "kprobe/random.hpp"

namespace kprobe {

TreebankError::TreebankError(std::string sentence_id, std::size_t line, const std::string& what)
    : std::runtime_error("sentence " + sentence_id + ", line " + std::to_string(line) + ": " + what),
      sentence_id_(std::move(sentence_id)),
      line_(line) {}

namespace {

struct TreeDefect {
  std::size_t token_pos;  // 0-based position of the token to blame
  std::string message;
};

std::optional<TreeDefect> find_tree_defect(const Sentence& s) {
  const int n = static_cast<int>(s.size());
  if (n == 0) return TreeDefect{0, "empty sentence"};
  for (int k = 0; k < n; ++k) {
    const Token& t = s.tokens[k];
    if (t.index != k + 1) {
      return TreeDefect{static_cast<std::size_t>(k),
                        "token ids not contiguous: expected " + std::to_string(k + 1) +
                            ", got " + std::to_string(t.index)};
    }
    if (t.head < 0 || t.head > n) {
      return TreeDefect{static_cast<std::size_t>(k),
                        "head " + std::to_string(t.head) + " out of range 0.." + std::to_string(n)};
    }
    if (t.head == t.index) {
      return TreeDefect{static_cast<std::size_t>(k), "token is its own head"};
    }
  }
  int roots = 0;
  std::size_t second_root = 0;
  for (int k = 0; k < n; ++k) {
    if (s.tokens[k].head == 0 && ++roots == 2) second_root = static_cast<std::size_t>(k);
  }
  if (roots == 0) return TreeDefect{0, "not a tree: no root token"};
  if (roots > 1) return TreeDefect{second_root, "not a tree: multiple root tokens"};

  // Walk up from every token; a walk longer than n steps means a cycle.
  // 0 = unknown, 1 = reaches root.
  std::vector<char> state(n, 0);
  std::vector<int> path;
  for (int start = 0; start < n; ++start) {
    path.clear();
    int cur = start;
    while (cur >= 0 && state[cur] == 0) {
      if (static_cast<int>(path.size()) > n) {
        return TreeDefect{static_cast<std::size_t>(start), "not a tree: head cycle"};
      }
      path.push_back(cur);
      cur = s.tokens[cur].head - 1;
    }
    for (int p : path) state[p] = 1;
  }
  return std::nullopt;
}

std::optional<int> parse_int(std::string_view field) {
  int value = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc{} || ptr != end || field.empty()) return std::nullopt;
  return value;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return cols;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

class BlockParser {
 public:
  void comment(std::string_view line) {
    auto body = trim(line.substr(1));
    constexpr std::string_view key = "sent_id";
    if (body.substr(0, key.size()) == key) {
      auto rest = trim(body.substr(key.size()));
      if (!rest.empty() && rest.front() == '=') rest = trim(rest.substr(1));
      declared_id_ = std::string(rest);
    }
  }

  void token(std::string_view line, std::size_t line_no) {
    in_block_ = true;
    const auto cols = split_tabs(line);
    if (cols.size() != 10) {
      fail(line_no, "expected 10 tab-separated columns, found " + std::to_string(cols.size()));
    }
    const auto id_field = cols[0];
    if (id_field.find('-') != std::string_view::npos || id_field.find('.') != std::string_view::npos) {
      return;  // multiword range or empty node
    }
    const auto index = parse_int(id_field);
    if (!index) fail(line_no, "non-integer token id '" + std::string(id_field) + "'");
    const auto head = parse_int(cols[6]);
    if (!head) fail(line_no, "non-integer head '" + std::string(cols[6]) + "'");
    current_.tokens.push_back(Token{*index, std::string(cols[1]), std::string(cols[3]), *head});
    token_lines_.push_back(line_no);
  }

  /// Closes the current block, if any, and appends it to `out`.
  void finish(std::vector<Sentence>& out) {
    if (!in_block_ && !declared_id_) return;
    if (current_.tokens.empty()) {
      reset();
      return;
    }
    current_.id = declared_id_ ? *declared_id_ : std::to_string(out.size() + 1);
    if (auto defect = find_tree_defect(current_)) {
      throw TreebankError(current_.id, token_lines_.at(defect->token_pos), defect->message);
    }
    out.push_back(std::move(current_));
    reset();
  }

 private:
  [[noreturn]] void fail(std::size_t line_no, const std::string& what) const {
    throw TreebankError(declared_id_ ? *declared_id_ : "<unnamed>", line_no, what);
  }

  void reset() {
    current_ = Sentence{};
    token_lines_.clear();
    declared_id_.reset();
    in_block_ = false;
  }

  Sentence current_;
  std::vector<std::size_t> token_lines_;
  std::optional<std::string> declared_id_;
  bool in_block_ = false;
};

}  // namespace

std::vector<Sentence> parse_conllu(std::string_view text) {
  std::vector<Sentence> sentences;
  BlockParser block;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (trim(line).empty()) {
      block.finish(sentences);
    } else if (line.front() == '#') {
      block.comment(line);
    } else {
      block.token(line, line_no);
    }
  }
  block.finish(sentences);
  return sentences;
}

std::vector<Sentence> read_conllu_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open treebank '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_conllu(buf.str());
}

std::string serialize_conllu(const std::vector<Sentence>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    out += "# sent_id = " + s.id + "\n";
    for (const auto& t : s.tokens) {
      out += std::to_string(t.index) + '\t' + t.form + "\t_\t" + t.upos + "\t_\t_\t" +
             std::to_string(t.head) + "\t_\t_\t_\n";
    }
    out += '\n';
  }
  return out;
}

void check_tree(const Sentence& s) {
  if (auto defect = find_tree_defect(s)) {
    throw std::invalid_argument("sentence " + s.id + ": " + defect->message);
  }
}

DistanceMatrix tree_distances(const Sentence& s) {
  check_tree(s);
  const int n = static_cast<int>(s.size());
  // Paths are at most n - 1 long, so n marks "not yet reached".
  DistanceMatrix d = DistanceMatrix::Constant(n, n, n);
  for (int i = 0; i < n; ++i) d(i, i) = 0;
  for (int i = 0; i < n; ++i) {
    const int h = s.tokens[i].head;
    if (h >= 1) {
      d(i, h - 1) = 1;
      d(h - 1, i) = 1;
    }
  }
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      const int dik = d(i, k);
      for (int j = 0; j < n; ++j) {
        d(i, j) = std::min(d(i, j), dik + d(k, j));
      }
    }
  }
  return d;
}

Sentence random_tree(Rng& rng, int n, std::string id) {
  if (n < 1) throw std::invalid_argument("random_tree needs n >= 1");
  std::vector<int> order(n);
  for (int k = 0; k < n; ++k) order[k] = k + 1;
  rng.shuffle(order.begin(), order.end());
  Sentence s;
  s.id = std::move(id);
  s.tokens.resize(n);
  for (int k = 0; k < n; ++k) s.tokens[k] = Token{k + 1, "w" + std::to_string(k + 1), "X", 0};
  for (int k = 1; k < n; ++k) {
    s.tokens[order[k] - 1].head = order[rng.index(static_cast<std::uint64_t>(k))];
  }
  return s;
}

SplitSpec make_splits(const std::vector<Sentence>& sentences, std::size_t cap, std::uint64_t seed,
                      bool shuffle) {
  if (cap < 10) throw std::invalid_argument("split cap must be at least 10");
  const std::size_t n = std::min(cap, sentences.size());
  if (n < 10) {
    throw std::invalid_argument("need at least 10 sentences to split, got " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
  }

  const std::size_t n_train = (8 * n) / 10;
  const std::size_t n_test = n / 10;

  SplitSpec split;
  split.seed = seed;
  split.cap = cap;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& id = sentences[order[k]].id;
    if (k < n_train) {
      split.train.push_back(id);
    } else if (k < n_train + n_test) {
      split.test.push_back(id);
    } else {
      split.dev.push_back(id);
    }
  }
  return split;
}

std::string split_to_json(const SplitSpec& split) {
  nlohmann::ordered_json j;
  j["train"] = split.train;
  j["dev"] = split.dev;
  j["test"] = split.test;
  j["seed"] = split.seed;
  j["cap"] = split.cap;
  return j.dump(1) + "\n";
}

SplitSpec split_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  SplitSpec split;
  split.train = j.at("train").get<std::vector<std::string>>();
  split.dev = j.at("dev").get<std::vector<std::string>>();
  split.test = j.at("test").get<std::vector<std::string>>();
  split.seed = j.value("seed", std::uint64_t{0});
  split.cap = j.value("cap", std::size_t{0});
  return split;
}

}  // namespace kprobe
