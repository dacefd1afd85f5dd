#include "blocknas/blockspace.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "blocknas/error.hpp"

namespace blocknas {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\n' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

bool valid_kernel(int k) { return k == 1 || k == 3 || k == 5; }

BranchOp parse_branch(std::string_view token) {
  const std::string_view t = trim(token);
  if (t.empty()) throw ParseError("empty branch");
  const auto open = t.find('(');
  if (open == std::string_view::npos || t.back() != ')')
    throw ParseError("malformed branch '" + std::string(t) + "', expected kind(k)");
  const OpKind kind = parse_op_kind(trim(t.substr(0, open)));
  const std::string_view digits = trim(t.substr(open + 1, t.size() - open - 2));
  int kernel = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), kernel);
  if (ec != std::errc() || ptr != digits.data() + digits.size())
    throw ParseError("bad kernel '" + std::string(digits) + "' in '" + std::string(t) + "'");
  if (!valid_kernel(kernel))
    throw ParseError("kernel " + std::to_string(kernel) + " not allowed in '" + std::string(t) +
                     "' (expected 1, 3 or 5)");
  return BranchOp(kind, kernel);
}

}  // namespace

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::conv: return "conv";
    case OpKind::rc_conv: return "rc_conv";
    case OpKind::sp_conv: return "sp_conv";
  }
  return "?";
}

std::string_view to_string(CombinerKind kind) {
  switch (kind) {
    case CombinerKind::concat: return "concat";
    case CombinerKind::add_det: return "add_det";
    case CombinerKind::add_stc: return "add_stc";
  }
  return "?";
}

OpKind parse_op_kind(std::string_view text) {
  if (text == "conv") return OpKind::conv;
  if (text == "rc_conv") return OpKind::rc_conv;
  if (text == "sp_conv") return OpKind::sp_conv;
  throw ParseError("unknown branch kind '" + std::string(text) + "'");
}

CombinerKind parse_combiner(std::string_view text) {
  if (text == "concat") return CombinerKind::concat;
  if (text == "add_det" || text == "add") return CombinerKind::add_det;
  if (text == "add_stc") return CombinerKind::add_stc;
  throw ParseError("unknown combiner '" + std::string(text) + "'");
}

BranchOp::BranchOp(OpKind kind, int kernel) : kind_(kind), kernel_(kernel) {
  if (static_cast<unsigned>(kind) > 2)
    throw ConfigError("invalid branch kind");
  if (!valid_kernel(kernel))
    throw ConfigError("kernel " + std::to_string(kernel) + " not allowed (expected 1, 3 or 5)");
}

std::string BranchOp::str() const {
  return std::string(to_string(kind_)) + "(" + std::to_string(kernel_) + ")";
}

const std::array<BranchOp, 9>& canonical_ops() {
  static const std::array<BranchOp, 9> ops = {
      BranchOp(OpKind::conv, 1),    BranchOp(OpKind::conv, 3),    BranchOp(OpKind::conv, 5),
      BranchOp(OpKind::rc_conv, 1), BranchOp(OpKind::rc_conv, 3), BranchOp(OpKind::rc_conv, 5),
      BranchOp(OpKind::sp_conv, 1), BranchOp(OpKind::sp_conv, 3), BranchOp(OpKind::sp_conv, 5),
  };
  return ops;
}

const std::array<CombinerKind, 3>& canonical_combiners() {
  static const std::array<CombinerKind, 3> kinds = {CombinerKind::concat, CombinerKind::add_det,
                                                    CombinerKind::add_stc};
  return kinds;
}

BlockConfig::BlockConfig(std::vector<BranchOp> branches, CombinerKind combiner)
    : branches_(std::move(branches)), combiner_(combiner) {
  const auto n = static_cast<int>(branches_.size());
  if (n < kMinBranches || n > kMaxBranches)
    throw ConfigError("branch count " + std::to_string(n) + " outside [1, 8]");
}

SearchSpace::SearchSpace(int branch_count, std::vector<BranchOp> ops,
                         std::vector<CombinerKind> combiners)
    : branch_count_(branch_count), ops_(std::move(ops)), combiners_(std::move(combiners)) {
  if (branch_count_ < kMinBranches || branch_count_ > kMaxBranches)
    throw ConfigError("branch count " + std::to_string(branch_count_) + " outside [1, 8]");
  std::sort(ops_.begin(), ops_.end());
  ops_.erase(std::unique(ops_.begin(), ops_.end()), ops_.end());
  std::sort(combiners_.begin(), combiners_.end());
  combiners_.erase(std::unique(combiners_.begin(), combiners_.end()), combiners_.end());
  if (ops_.empty()) throw ConfigError("search space has no branch operations");
  if (combiners_.empty()) throw ConfigError("search space has no combiners");
}

SearchSpace SearchSpace::full(int branch_count) {
  const auto& ops = canonical_ops();
  const auto& comb = canonical_combiners();
  return SearchSpace(branch_count, {ops.begin(), ops.end()}, {comb.begin(), comb.end()});
}

std::uint64_t space_size(const SearchSpace& space) {
  std::uint64_t size = space.combiners().size();
  for (int i = 0; i < space.branch_count(); ++i) size *= space.ops().size();
  return size;
}

BlockConfig sample_block(const SearchSpace& space, Random& rng) {
  std::vector<BranchOp> branches;
  branches.reserve(static_cast<std::size_t>(space.branch_count()));
  for (int i = 0; i < space.branch_count(); ++i)
    branches.push_back(space.ops()[rng.uniform_index(space.ops().size())]);
  const CombinerKind combiner = space.combiners()[rng.uniform_index(space.combiners().size())];
  return BlockConfig(std::move(branches), combiner);
}

BlockConfig sample_block(const SearchSpace& space, std::uint64_t seed, std::uint64_t draw_index) {
  Random rng(derive_seed(seed, draw_index));
  return sample_block(space, rng);
}

BlockConfig sample_block_avoiding(const SearchSpace& space, Random& rng,
                                  std::span<const BlockConfig> previous, int max_attempts) {
  std::set<std::string> seen;
  for (const auto& c : previous) seen.insert(format_config(canonicalize(c)));
  BlockConfig candidate = sample_block(space, rng);
  for (int attempt = 1; attempt < max_attempts; ++attempt) {
    if (!seen.contains(format_config(canonicalize(candidate)))) return candidate;
    candidate = sample_block(space, rng);
  }
  return candidate;
}

BlockConfig canonicalize(const BlockConfig& config) {
  if (!is_additive(config.combiner())) return config;
  std::vector<BranchOp> sorted = config.branches();
  std::sort(sorted.begin(), sorted.end());
  return BlockConfig(std::move(sorted), config.combiner());
}

std::string format_config(const BlockConfig& config) {
  std::string out;
  for (std::size_t i = 0; i < config.branches().size(); ++i) {
    if (i > 0) out += '|';
    out += config.branches()[i].str();
  }
  out += '+';
  out += to_string(config.combiner());
  return out;
}

BlockConfig parse_config(std::string_view text) {
  const std::string_view t = trim(text);
  const auto plus = t.rfind('+');
  if (plus == std::string_view::npos)
    throw ParseError("missing '+<combiner>' in config '" + std::string(t) + "'");
  const std::string_view branch_part = trim(t.substr(0, plus));
  const CombinerKind combiner = parse_combiner(trim(t.substr(plus + 1)));
  if (branch_part.empty()) throw ParseError("empty branch list in config '" + std::string(t) + "'");
  std::vector<BranchOp> branches;
  for (auto token : split(branch_part, '|')) branches.push_back(parse_branch(token));
  if (static_cast<int>(branches.size()) > kMaxBranches)
    throw ParseError("too many branches (" + std::to_string(branches.size()) + ") in config '" +
                     std::string(t) + "'");
  return BlockConfig(std::move(branches), combiner);
}

SearchSpace parse_space(std::string_view text) {
  int branches = kDefaultBranches;
  const auto& all_ops = canonical_ops();
  const auto& all_comb = canonical_combiners();
  std::vector<BranchOp> ops(all_ops.begin(), all_ops.end());
  std::vector<CombinerKind> combiners(all_comb.begin(), all_comb.end());

  const std::string_view t = trim(text);
  if (!t.empty()) {
    for (auto item : split(t, ';')) {
      item = trim(item);
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string_view::npos)
        throw ParseError("space entry '" + std::string(item) + "' is not key=value");
      const std::string_view key = trim(item.substr(0, eq));
      const std::string_view value = trim(item.substr(eq + 1));
      if (key == "branches" || key == "B") {
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), branches);
        if (ec != std::errc() || ptr != value.data() + value.size())
          throw ParseError("bad branch count '" + std::string(value) + "'");
      } else if (key == "ops") {
        if (value != "all") {
          ops.clear();
          for (auto tok : split(value, ',')) ops.push_back(parse_branch(tok));
        }
      } else if (key == "combiners") {
        if (value != "all") {
          combiners.clear();
          for (auto tok : split(value, ',')) combiners.push_back(parse_combiner(trim(tok)));
        }
      } else {
        throw ParseError("unknown space key '" + std::string(key) + "'");
      }
    }
  }
  return SearchSpace(branches, std::move(ops), std::move(combiners));
}

std::string format_space(const SearchSpace& space) {
  std::string out = "branches=" + std::to_string(space.branch_count()) + ";ops=";
  for (std::size_t i = 0; i < space.ops().size(); ++i) {
    if (i > 0) out += ',';
    out += space.ops()[i].str();
  }
  out += ";combiners=";
  for (std::size_t i = 0; i < space.combiners().size(); ++i) {
    if (i > 0) out += ',';
    out += to_string(space.combiners()[i]);
  }
  return out;
}

nlohmann::json space_to_json(const SearchSpace& space) {
  nlohmann::json ops = nlohmann::json::array();
  for (const auto& op : space.ops()) ops.push_back(op.str());
  nlohmann::json combiners = nlohmann::json::array();
  for (auto c : space.combiners()) combiners.push_back(std::string(to_string(c)));
  return {{"branch_count", space.branch_count()}, {"ops", ops}, {"combiners", combiners}};
}

SearchSpace space_from_json(const nlohmann::json& j) {
  try {
    std::vector<BranchOp> ops;
    for (const auto& op : j.at("ops")) ops.push_back(parse_branch(op.get<std::string>()));
    std::vector<CombinerKind> combiners;
    for (const auto& c : j.at("combiners")) combiners.push_back(parse_combiner(c.get<std::string>()));
    return SearchSpace(j.at("branch_count").get<int>(), std::move(ops), std::move(combiners));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("search space: ") + e.what());
  }
}

}  // namespace blocknas
