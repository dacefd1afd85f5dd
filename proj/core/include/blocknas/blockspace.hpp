#pragma once

// Block search space: branch operations, combiners, sampling and the
// `kind(k)|kind(k)+combiner` text form.

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "blocknas/random.hpp"

namespace blocknas {

enum class OpKind : std::uint8_t { conv = 0, rc_conv = 1, sp_conv = 2 };
enum class CombinerKind : std::uint8_t { concat = 0, add_det = 1, add_stc = 2 };

inline constexpr int kMinBranches = 1;
inline constexpr int kMaxBranches = 8;
inline constexpr int kDefaultBranches = 4;

std::string_view to_string(OpKind kind);
std::string_view to_string(CombinerKind kind);
OpKind parse_op_kind(std::string_view text);
// Accepts `add` as an alias for `add_det`.
CombinerKind parse_combiner(std::string_view text);

inline bool is_additive(CombinerKind kind) { return kind != CombinerKind::concat; }

class BranchOp {
 public:
  // Throws ConfigError unless kernel is 1, 3 or 5.
  BranchOp(OpKind kind, int kernel);

  OpKind kind() const { return kind_; }
  int kernel() const { return kernel_; }

  std::string str() const;

  // Total order on (kind, kernel), used by canonicalize.
  friend auto operator<=>(const BranchOp&, const BranchOp&) = default;

 private:
  OpKind kind_;
  int kernel_;
};

// The nine operations conv/rc_conv/sp_conv x {1,3,5}, in BranchOp order.
const std::array<BranchOp, 9>& canonical_ops();
const std::array<CombinerKind, 3>& canonical_combiners();

class BlockConfig {
 public:
  // Throws ConfigError when the branch count is outside [1, 8].
  BlockConfig(std::vector<BranchOp> branches, CombinerKind combiner);

  const std::vector<BranchOp>& branches() const { return branches_; }
  int branch_count() const { return static_cast<int>(branches_.size()); }
  CombinerKind combiner() const { return combiner_; }

  friend bool operator==(const BlockConfig&, const BlockConfig&) = default;

 private:
  std::vector<BranchOp> branches_;
  CombinerKind combiner_;
};

class SearchSpace {
 public:
  // Duplicate entries are folded; empty sets or a branch count outside
  // [1, 8] throw ConfigError.
  SearchSpace(int branch_count, std::vector<BranchOp> ops, std::vector<CombinerKind> combiners);

  // Four branches over all nine ops and three combiners.
  static SearchSpace full(int branch_count = kDefaultBranches);

  int branch_count() const { return branch_count_; }
  const std::vector<BranchOp>& ops() const { return ops_; }
  const std::vector<CombinerKind>& combiners() const { return combiners_; }

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;

 private:
  int branch_count_;
  std::vector<BranchOp> ops_;
  std::vector<CombinerKind> combiners_;
};

// |ops|^B * |combiners|.
std::uint64_t space_size(const SearchSpace& space);

// Each branch slot i.i.d. uniform over the allowed ops, then one combiner.
BlockConfig sample_block(const SearchSpace& space, Random& rng);

// Draw number `draw_index` of the stream seeded by `seed`; a pure function
// of its arguments.
BlockConfig sample_block(const SearchSpace& space, std::uint64_t seed, std::uint64_t draw_index);

// Resamples while the canonical form collides with one of `previous`, up to
// `max_attempts` draws; the last draw is returned even if it is a duplicate.
BlockConfig sample_block_avoiding(const SearchSpace& space, Random& rng,
                                  std::span<const BlockConfig> previous, int max_attempts = 100);

// Additive combiners are order-symmetric, so their branches are sorted.
BlockConfig canonicalize(const BlockConfig& config);

std::string format_config(const BlockConfig& config);
// Throws ParseError naming the offending token.
BlockConfig parse_config(std::string_view text);

// `branches=4;ops=all;combiners=add_det,concat`; omitted keys default to the
// full space.
SearchSpace parse_space(std::string_view text);
std::string format_space(const SearchSpace& space);

nlohmann::json space_to_json(const SearchSpace& space);
SearchSpace space_from_json(const nlohmann::json& j);

}  // namespace blocknas
