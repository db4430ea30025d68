#include "seqlevel/generate.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace seqlevel {

using Eigen::VectorXd;

namespace {

double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

double rank_key(const ScoredCandidate& c, bool normalize) {
  return normalize ? c.avg_logprob : sum_of(c.tok_logprobs);
}

struct Partial {
  ScoredCandidate cand;
  DecoderState state;
  double logprob_sum = 0.0;
};

struct Expansion {
  std::size_t parent;
  TokenId token;
  double logprob_sum;
  double key;
};

std::vector<ScoredCandidate> dedup(std::vector<ScoredCandidate> hyps) {
  std::set<TokenSeq> seen;
  std::vector<ScoredCandidate> out;
  out.reserve(hyps.size());
  for (auto& h : hyps)
    if (seen.insert(h.tokens).second) out.push_back(std::move(h));
  return out;
}

}  // namespace

SearchMode parse_search_mode(std::string_view name) {
  if (name == "beam") return SearchMode::kBeam;
  if (name == "sample") return SearchMode::kSample;
  throw std::invalid_argument("unknown search mode: " + std::string(name));
}

std::string search_mode_name(SearchMode mode) { return mode == SearchMode::kBeam ? "beam" : "sample"; }

bool is_generatable(TokenId id) { return id != kPad && id != kBos && id != kUnk; }

bool hypothesis_before(const ScoredCandidate& a, const ScoredCandidate& b, bool normalize) {
  const double ka = rank_key(a, normalize), kb = rank_key(b, normalize);
  if (ka != kb) return ka > kb;
  return a.tokens < b.tokens;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

std::vector<ScoredCandidate> beam_search(const Params& params, std::span<const TokenId> source, std::size_t k,
                                         std::size_t max_len, bool normalize) {
  if (k == 0) throw std::invalid_argument("beam size must be positive");
  if (max_len == 0) throw std::invalid_argument("max_len must be positive");
  max_len = std::min(max_len, kMaxGenerationLength);
  const auto V = static_cast<TokenId>(params.dims().vocab);
  const EncoderStates enc = encode(params, source);

  std::vector<Partial> active(1);
  active[0].state = initial_state(params, enc);
  std::vector<ScoredCandidate> finished;

  for (std::size_t t = 1; t <= max_len && !active.empty() && finished.size() < k; ++t) {
    std::vector<VectorXd> logits(active.size()), log_probs(active.size());
    std::vector<DecoderState> next_states(active.size());
    std::vector<Expansion> expansions;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const TokenId prev = active[a].cand.tokens.empty() ? kBos : active[a].cand.tokens.back();
      StepOutput out = decoder_step(params, active[a].state, prev, enc);
      log_probs[a] = log_softmax(out.logits);
      logits[a] = std::move(out.logits);
      next_states[a] = std::move(out.next);
      for (TokenId tok = 0; tok < V; ++tok) {
        if (!is_generatable(tok)) continue;
        if (t == max_len && tok != kEos) continue;
        const double lp = active[a].logprob_sum + log_probs[a][tok];
        expansions.push_back({a, tok, lp, normalize ? lp / static_cast<double>(t) : lp});
      }
    }
    std::sort(expansions.begin(), expansions.end(), [&](const Expansion& x, const Expansion& y) {
      if (x.key != y.key) return x.key > y.key;
      const auto& px = active[x.parent].cand.tokens;
      const auto& py = active[y.parent].cand.tokens;
      if (px != py) return px < py;
      return x.token < y.token;
    });

    std::vector<Partial> next;
    for (std::size_t rank = 0; rank < expansions.size(); ++rank) {
      const Expansion& e = expansions[rank];
      const bool is_eos = e.token == kEos;
      if (is_eos && rank >= k) continue;
      if (!is_eos && next.size() >= k) continue;
      Partial p;
      p.cand = active[e.parent].cand;
      p.cand.tokens.push_back(e.token);
      p.cand.tok_scores.push_back(logits[e.parent][e.token]);
      p.cand.tok_logprobs.push_back(log_probs[e.parent][e.token]);
      p.logprob_sum = e.logprob_sum;
      if (is_eos) {
        p.cand.finalize();
        finished.push_back(std::move(p.cand));
      } else {
        p.state = next_states[e.parent];
        next.push_back(std::move(p));
      }
    }
    active = std::move(next);
  }

  std::sort(finished.begin(), finished.end(),
            [normalize](const ScoredCandidate& a, const ScoredCandidate& b) { return hypothesis_before(a, b, normalize); });
  if (finished.size() > k) finished.resize(k);
  return finished;
}

std::vector<ScoredCandidate> sample_k(const Params& params, std::span<const TokenId> source, std::size_t k,
                                      std::size_t max_len, std::uint64_t seed) {
  if (max_len == 0) throw std::invalid_argument("max_len must be positive");
  max_len = std::min(max_len, kMaxGenerationLength);
  const auto V = static_cast<TokenId>(params.dims().vocab);
  const EncoderStates enc = encode(params, source);
  Rng rng(seed);

  std::vector<ScoredCandidate> samples;
  samples.reserve(k);
  std::vector<double> weights(V);
  for (std::size_t s = 0; s < k; ++s) {
    ScoredCandidate cand;
    DecoderState state = initial_state(params, enc);
    TokenId prev = kBos;
    for (std::size_t t = 1; t <= max_len; ++t) {
      StepOutput out = decoder_step(params, state, prev, enc);
      const VectorXd lp = log_softmax(out.logits);
      TokenId tok = kEos;
      if (t < max_len) {
        double total = 0.0;
        for (TokenId v = 0; v < V; ++v) {
          weights[v] = is_generatable(v) ? std::exp(lp[v]) : 0.0;
          total += weights[v];
        }
        double u = rng.uniform() * total;
        tok = kEos;
        for (TokenId v = 0; v < V; ++v) {
          if (weights[v] <= 0.0) continue;
          tok = v;
          if (u < weights[v]) break;
          u -= weights[v];
        }
      }
      cand.tokens.push_back(tok);
      cand.tok_scores.push_back(out.logits[tok]);
      cand.tok_logprobs.push_back(lp[tok]);
      if (tok == kEos) break;
      state = std::move(out.next);
      prev = tok;
    }
    cand.finalize();
    samples.push_back(std::move(cand));
  }
  return dedup(std::move(samples));
}

std::vector<ScoredCandidate> generate(const Params& params, std::span<const TokenId> source,
                                      const GenerationConfig& config, std::uint64_t seed) {
  if (config.mode == SearchMode::kBeam) return beam_search(params, source, config.k, config.max_len, config.normalize);
  return sample_k(params, source, config.k, config.max_len, seed);
}

void CandidateSet::select() {
  if (members.empty()) throw std::invalid_argument("empty candidate set");
  pseudo_ref = 0;
  model_best = 0;
  for (std::size_t i = 1; i < members.size(); ++i) {
    if (members[i].cost < members[pseudo_ref].cost) pseudo_ref = i;
    if (members[i].avg_score > members[model_best].avg_score) model_best = i;
  }
}

CandidateSet make_candidate_set(std::vector<ScoredCandidate> hyps, std::span<const TokenId> ref, MetricKind metric,
                                std::size_t source_id) {
  if (hyps.empty()) throw std::invalid_argument("empty hypothesis list");
  CandidateSet set;
  set.source_id = source_id;
  set.members = dedup(std::move(hyps));
  const TokenSeq ref_words = strip_eos(TokenSeq(ref.begin(), ref.end()));
  for (auto& m : set.members) {
    const TokenSeq words = strip_eos(m.tokens);
    m.metric = metric_score(ref_words, words, metric);
    m.cost = 1.0 - m.metric;
  }
  set.select();
  return set;
}

CandidateSet rescale_set_costs(CandidateSet set) {
  if (set.size() < 2) return set;
  std::vector<double> costs;
  costs.reserve(set.size());
  for (const auto& m : set.members) costs.push_back(m.cost);
  const auto scaled = rescale_costs(costs);
  for (std::size_t i = 0; i < set.size(); ++i) set.members[i].cost = scaled[i];
  return set;
}

void CandidateCache::put(std::size_t source_id, std::vector<TokenSeq> candidates) {
  entries_[source_id] = std::move(candidates);
}

const std::vector<TokenSeq>& CandidateCache::get(std::size_t source_id) const {
  auto it = entries_.find(source_id);
  if (it == entries_.end())
    throw std::out_of_range("offline cache has no candidates for source " + std::to_string(source_id));
  return it->second;
}

std::string CandidateCache::to_string() const {
  std::ostringstream out;
  for (const auto& [id, cands] : entries_) {
    out << id << '\t';
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (c) out << '|';
      for (std::size_t i = 0; i < cands[c].size(); ++i) out << (i ? " " : "") << cands[c][i];
    }
    out << '\n';
  }
  return out.str();
}

CandidateCache CandidateCache::parse(std::istream& in) {
  CandidateCache cache;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("cache line " + std::to_string(line_no) + ": missing tab");
    const std::size_t id = std::stoull(line.substr(0, tab));
    std::vector<TokenSeq> cands;
    std::stringstream rest(line.substr(tab + 1));
    std::string field;
    while (std::getline(rest, field, '|')) {
      TokenSeq seq;
      for (const auto& tok : split_whitespace(field)) seq.push_back(static_cast<TokenId>(std::stol(tok)));
      if (seq.empty()) throw std::runtime_error("cache line " + std::to_string(line_no) + ": empty candidate");
      cands.push_back(std::move(seq));
    }
    cache.put(id, std::move(cands));
  }
  return cache;
}

void CandidateCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_string();
}

CandidateCache CandidateCache::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse(in);
}

CandidateCache build_cache(const Params& params, const std::vector<SentencePair>& pairs,
                           const GenerationConfig& config) {
  CandidateCache cache;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto hyps = generate(params, pairs[i].source, config, mix_seed(config.seed, i));
    std::vector<TokenSeq> tokens;
    tokens.reserve(hyps.size());
    for (auto& h : hyps) tokens.push_back(std::move(h.tokens));
    cache.put(i, std::move(tokens));
  }
  return cache;
}

CandidateProvider::CandidateProvider(GenerationConfig config, std::optional<CandidateCache> cache)
    : config_(config), cache_(std::move(cache)) {
  if (!config_.online && !cache_) throw std::invalid_argument("offline candidate generation requires a cache");
}

std::vector<TokenSeq> CandidateProvider::tokens(const Params& params, std::size_t source_id,
                                                std::span<const TokenId> source, std::size_t epoch) {
  if (!config_.online) return cache_->get(source_id);
  ++generation_calls_;
  auto hyps = generate(params, source, config_, mix_seed(config_.seed, source_id, epoch));
  std::vector<TokenSeq> out;
  out.reserve(hyps.size());
  for (auto& h : hyps) out.push_back(std::move(h.tokens));
  return out;
}

CandidateSet CandidateProvider::provide(const Params& params, std::size_t source_id, std::span<const TokenId> source,
                                        std::span<const TokenId> ref, MetricKind metric, std::size_t epoch) {
  const auto toks = tokens(params, source_id, source, epoch);
  ForwardPass pass(params, source);
  std::vector<ScoredCandidate> scored;
  scored.reserve(toks.size());
  for (const auto& t : toks) scored.push_back(pass.scored(pass.add(t)));
  return make_candidate_set(std::move(scored), ref, metric, source_id);
}

void CandidateProvider::refresh(const Params& params, const std::vector<SentencePair>& pairs) {
  if (config_.online) return;
  ++generation_calls_;
  cache_ = build_cache(params, pairs, config_);
}

}  // namespace seqlevel
