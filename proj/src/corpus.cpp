#include "seqlevel/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seqlevel {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kReserved = {"<pad>", "<s>", "</s>", "<unk>"};
  return kReserved;
}

bool is_reserved(std::string_view token) {
  const auto& r = reserved_tokens();
  return std::find(r.begin(), r.end(), token) != r.end();
}

}  // namespace

Vocab::Vocab() : Vocab(reserved_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& r = reserved_tokens();
  if (tokens_.size() < r.size() || !std::equal(r.begin(), r.end(), tokens_.begin()))
    throw std::invalid_argument("vocab must start with <pad> <s> </s> <unk>");
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw std::invalid_argument("duplicate vocab token: " + tokens_[i]);
  }
}

Vocab Vocab::synthetic(std::size_t size) {
  if (size <= static_cast<std::size_t>(kNumReserved))
    throw std::invalid_argument("synthetic vocab needs at least one real token");
  std::vector<std::string> tokens = reserved_tokens();
  for (std::size_t i = kNumReserved; i < size; ++i) tokens.push_back("w" + std::to_string(i - kNumReserved));
  return Vocab(std::move(tokens));
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("invalid id " + std::to_string(id));
  return tokens_[id];
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& t : tokens_) {
    for (unsigned char c : t) mix(c);
    mix('\n');
  }
  return h;
}

void Vocab::save(const std::filesystem::path& path) const { write_lines(path, tokens_); }

Vocab Vocab::load(const std::filesystem::path& path) { return Vocab(read_lines(path)); }

SyntheticTask parse_task(std::string_view name) {
  if (name == "copy") return SyntheticTask::kCopy;
  if (name == "noisy_copy") return SyntheticTask::kNoisyCopy;
  if (name == "reverse") return SyntheticTask::kReverse;
  throw std::invalid_argument("unknown task: " + std::string(name));
}

std::string task_name(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::kCopy: return "copy";
    case SyntheticTask::kNoisyCopy: return "noisy_copy";
    case SyntheticTask::kReverse: return "reverse";
  }
  return "?";
}

std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& lines, std::size_t max_size) {
  if (max_size < 5) throw std::invalid_argument("max_size must be at least 5");
  struct Entry {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Entry> counts;
  std::size_t position = 0;
  for (const auto& line : lines) {
    for (auto& tok : split_whitespace(line)) {
      if (is_reserved(tok)) continue;
      auto [it, inserted] = counts.try_emplace(std::move(tok));
      if (inserted) it->second.first = position;
      ++it->second.count;
      ++position;
    }
  }
  if (counts.empty()) throw std::invalid_argument("empty corpus");

  std::vector<std::pair<std::string, Entry>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first < b.second.first;
  });
  std::vector<std::string> tokens = reserved_tokens();
  const std::size_t keep = std::min(ranked.size(), max_size - kNumReserved);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(std::move(ranked[i].first));
  return Vocab(std::move(tokens));
}

TokenSeq encode_line(const Vocab& vocab, std::string_view text) {
  TokenSeq ids;
  for (const auto& tok : split_whitespace(text)) ids.push_back(vocab.id(tok));
  ids.push_back(kEos);
  return ids;
}

std::string decode_ids(const Vocab& vocab, const TokenSeq& ids) {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
      throw std::out_of_range("invalid id " + std::to_string(id));
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

TokenSeq strip_eos(const TokenSeq& ids) {
  auto end = std::find(ids.begin(), ids.end(), kEos);
  return TokenSeq(ids.begin(), end);
}

std::vector<SentencePair> gen_synthetic(const SyntheticSpec& spec, std::size_t count,
                                        const Vocab& vocab, std::uint64_t seed) {
  if (vocab.size() <= 5) throw std::invalid_argument("degenerate vocab: need V > 5");
  if (spec.p_sub < 0.0 || spec.p_sub >= 1.0) throw std::invalid_argument("p_sub must be in [0,1)");
  if (spec.min_len < 1 || spec.min_len > spec.max_len || spec.max_len + 1 > kDefaultMaxSentenceLength)
    throw std::invalid_argument("invalid length range");

  const std::uint64_t real = vocab.size() - kNumReserved;
  Rng rng(seed);
  std::vector<SentencePair> pairs;
  pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t len = spec.min_len + rng.uniform_int(spec.max_len - spec.min_len + 1);
    TokenSeq clean(len);
    for (auto& t : clean) t = static_cast<TokenId>(kNumReserved + rng.uniform_int(real));

    SentencePair pair;
    switch (spec.task) {
      case SyntheticTask::kCopy:
        pair.source = clean;
        pair.target = clean;
        break;
      case SyntheticTask::kReverse:
        pair.source = clean;
        pair.target.assign(clean.rbegin(), clean.rend());
        break;
      case SyntheticTask::kNoisyCopy:
        pair.source = clean;
        pair.target = clean;
        for (auto& t : pair.source) {
          if (rng.uniform() < spec.p_sub) {
            // substitute with a different real token
            auto other = static_cast<TokenId>(kNumReserved + rng.uniform_int(real - 1));
            if (other >= t) ++other;
            t = other;
          }
        }
        break;
    }
    pair.source.push_back(kEos);
    pair.target.push_back(kEos);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<Batch> batch_by_tokens(const std::vector<SentencePair>& pairs, std::size_t max_tokens,
                                   std::uint64_t seed) {
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (pairs[i].target.size() > max_tokens)
      throw std::invalid_argument("pair " + std::to_string(i) + " has " +
                                  std::to_string(pairs[i].target.size()) +
                                  " target tokens, exceeding max_tokens " + std::to_string(max_tokens));
    order[i] = i;
  }
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Batch> batches;
  Batch current;
  for (std::size_t i : order) {
    const std::size_t n = pairs[i].target.size();
    if (!current.pairs.empty() && current.target_tokens + n > max_tokens) {
      batches.push_back(std::move(current));
      current = Batch{};
    }
    current.pairs.push_back(pairs[i]);
    current.indices.push_back(i);
    current.target_tokens += n;
  }
  if (!current.pairs.empty()) batches.push_back(std::move(current));
  return batches;
}

std::pair<std::vector<SentencePair>, std::vector<SentencePair>> split_validation(
    const std::vector<SentencePair>& pairs, double valid_fraction, std::uint64_t seed) {
  if (valid_fraction < 0.0 || valid_fraction >= 1.0)
    throw std::invalid_argument("valid_fraction must be in [0,1)");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed ^ 0x5eedf00dULL);
  rng.shuffle(order);
  const auto n_valid = static_cast<std::size_t>(valid_fraction * static_cast<double>(pairs.size()));
  std::vector<bool> is_valid(pairs.size(), false);
  for (std::size_t k = 0; k < n_valid; ++k) is_valid[order[k]] = true;

  std::pair<std::vector<SentencePair>, std::vector<SentencePair>> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) (is_valid[i] ? out.second : out.first).push_back(pairs[i]);
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<SentencePair> read_parallel(const Vocab& vocab, const std::filesystem::path& source,
                                        const std::filesystem::path& target, std::size_t max_len) {
  const auto src = read_lines(source);
  const auto tgt = read_lines(target);
  if (src.size() != tgt.size())
    throw std::runtime_error("parallel files differ in length: " + std::to_string(src.size()) + " vs " +
                             std::to_string(tgt.size()));
  std::vector<SentencePair> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    SentencePair p{encode_line(vocab, src[i]), encode_line(vocab, tgt[i])};
    if (p.source.size() < 2 || p.target.size() < 2) continue;
    if (p.source.size() > max_len || p.target.size() > max_len) continue;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_parallel(const Vocab& vocab, const std::vector<SentencePair>& pairs,
                    const std::filesystem::path& source, const std::filesystem::path& target) {
  std::vector<std::string> src, tgt;
  src.reserve(pairs.size());
  tgt.reserve(pairs.size());
  for (const auto& p : pairs) {
    src.push_back(decode_ids(vocab, p.source));
    tgt.push_back(decode_ids(vocab, p.target));
  }
  write_lines(source, src);
  write_lines(target, tgt);
}

}  // namespace seqlevel
