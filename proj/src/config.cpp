#include "seqlevel/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace seqlevel {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw std::invalid_argument("config key " + key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw std::invalid_argument("config key " + key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key " + key + ": expected true or false, got '" + v + "'");
}

}  // namespace

ConfigMap parse_key_values(std::istream& in) {
  ConfigMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(line_no) + ": missing '='");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": duplicate key " + key);
  }
  return out;
}

ConfigMap read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_key_values(in);
}

std::string format_key_values(const ConfigMap& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

TrainConfig TrainConfig::effective() const {
  TrainConfig c = *this;
  if (c.bso_compat) {
    c.generation.k = 5;
    c.generation.normalize = false;
    c.objective.loss.rescale_costs = true;
    c.eval_k = 5;
    c.eval_normalize = false;
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
  if (!(max_grad_norm > 0.0)) throw std::invalid_argument("max_grad_norm must be positive");
  if (!(anneal_factor > 1.0)) throw std::invalid_argument("anneal_factor must exceed 1");
  if (!(min_lr > 0.0)) throw std::invalid_argument("min_lr must be positive");
  if (max_tokens == 0) throw std::invalid_argument("max_tokens must be positive");
  if (dim == 0) throw std::invalid_argument("dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0,1)");
  if (!(valid_fraction >= 0.0 && valid_fraction < 1.0)) throw std::invalid_argument("valid_fraction must be in [0,1)");
  if (generation.k == 0 || eval_k == 0) throw std::invalid_argument("k must be positive");
  if (generation.max_len == 0 || eval_max_len == 0) throw std::invalid_argument("max_len must be positive");
  if (!is_token_level(objective.token_objective)) throw std::invalid_argument("token_objective must be toknll or tokls");
  if (objective.combine != Combine::kNone && is_token_level(objective.objective))
    throw std::invalid_argument("combine needs a sequence-level objective");
  objective.loss.validate();
}

ConfigMap TrainConfig::to_map() const {
  const auto& l = objective.loss;
  return {
      {"lr", fmt(lr)},
      {"momentum", fmt(momentum)},
      {"max_grad_norm", fmt(max_grad_norm)},
      {"anneal_factor", fmt(anneal_factor)},
      {"min_lr", fmt(min_lr)},
      {"max_tokens", fmt(std::uint64_t{max_tokens})},
      {"token_epochs", fmt(std::uint64_t{token_epochs})},
      {"seq_epochs", fmt(std::uint64_t{seq_epochs})},
      {"anneal_sequence", fmt(anneal_sequence)},
      {"dim", fmt(std::uint64_t{dim})},
      {"dropout", fmt(dropout)},
      {"seed", fmt(seed)},
      {"valid_fraction", fmt(valid_fraction)},
      {"token_objective", objective_name(objective.token_objective)},
      {"objective", objective_name(objective.objective)},
      {"combine", combine_name(objective.combine)},
      {"epsilon", fmt(l.epsilon)},
      {"alpha", fmt(l.alpha)},
      {"beta", fmt(l.beta)},
      {"metric", metric_name(l.metric)},
      {"rescale_costs", fmt(l.rescale_costs)},
      {"k", fmt(std::uint64_t{generation.k})},
      {"max_len", fmt(std::uint64_t{generation.max_len})},
      {"search", search_mode_name(generation.mode)},
      {"online", fmt(generation.online)},
      {"normalize", fmt(generation.normalize)},
      {"gen_seed", fmt(generation.seed)},
      {"refresh_every", fmt(std::uint64_t{generation.refresh_every})},
      {"eval_k", fmt(std::uint64_t{eval_k})},
      {"eval_normalize", fmt(eval_normalize)},
      {"eval_max_len", fmt(std::uint64_t{eval_max_len})},
      {"eval_every", fmt(std::uint64_t{eval_every})},
      {"bso_compat", fmt(bso_compat)},
  };
}

TrainConfig TrainConfig::from_map(const ConfigMap& values) {
  TrainConfig c;
  auto& l = c.objective.loss;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto num = [](double& f) -> Setter { return [&f](const auto& k, const auto& v) { f = parse_double(k, v); }; };
  auto count = [](std::size_t& f) -> Setter {
    return [&f](const auto& k, const auto& v) { f = static_cast<std::size_t>(parse_uint(k, v)); };
  };
  auto flag = [](bool& f) -> Setter { return [&f](const auto& k, const auto& v) { f = parse_bool(k, v); }; };
  const std::map<std::string, Setter> setters{
      {"lr", num(c.lr)},
      {"momentum", num(c.momentum)},
      {"max_grad_norm", num(c.max_grad_norm)},
      {"anneal_factor", num(c.anneal_factor)},
      {"min_lr", num(c.min_lr)},
      {"max_tokens", count(c.max_tokens)},
      {"token_epochs", count(c.token_epochs)},
      {"seq_epochs", count(c.seq_epochs)},
      {"anneal_sequence", flag(c.anneal_sequence)},
      {"dim", count(c.dim)},
      {"dropout", num(c.dropout)},
      {"seed", [&c](const auto& k, const auto& v) { c.seed = parse_uint(k, v); }},
      {"valid_fraction", num(c.valid_fraction)},
      {"token_objective", [&c](const auto&, const auto& v) { c.objective.token_objective = parse_objective(v); }},
      {"objective", [&c](const auto&, const auto& v) { c.objective.objective = parse_objective(v); }},
      {"combine", [&c](const auto&, const auto& v) { c.objective.combine = parse_combine(v); }},
      {"epsilon", num(l.epsilon)},
      {"alpha", num(l.alpha)},
      {"beta", num(l.beta)},
      {"metric", [&l](const auto&, const auto& v) { l.metric = parse_metric(v); }},
      {"rescale_costs", flag(l.rescale_costs)},
      {"k", count(c.generation.k)},
      {"max_len", count(c.generation.max_len)},
      {"search", [&c](const auto&, const auto& v) { c.generation.mode = parse_search_mode(v); }},
      {"online", flag(c.generation.online)},
      {"normalize", flag(c.generation.normalize)},
      {"gen_seed", [&c](const auto& k, const auto& v) { c.generation.seed = parse_uint(k, v); }},
      {"refresh_every", count(c.generation.refresh_every)},
      {"eval_k", count(c.eval_k)},
      {"eval_normalize", flag(c.eval_normalize)},
      {"eval_max_len", count(c.eval_max_len)},
      {"eval_every", count(c.eval_every)},
      {"bso_compat", flag(c.bso_compat)},
  };
  for (const auto& [key, value] : values) {
    auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("unknown config key: " + key);
    it->second(key, value);
  }
  return c;
}

}  // namespace seqlevel
