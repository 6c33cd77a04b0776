#pragma once

#include <bitset>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace rulegen {

/// Regular expressions evaluated by a Pike VM: matching time is
/// O(pattern size x input length) with no backtracking.
///
/// Supported: literals, `.`, classes (`[a-z]`, `[^...]`), `\d \w \s` and their
/// negations, `\b \B`, `^ $` (whole-input anchors), groups `(...)` and `(?:...)`,
/// alternation, `* + ? {n} {n,} {n,m}` (lazy suffix accepted), `\xHH`, and a
/// leading `(?i)` for case-insensitive matching.
/// Rejected with RegexError: backreferences, lookaround, unbalanced groups,
/// repetition counts above 1000, programs above 20000 instructions.
class LinearRegex {
 public:
  static LinearRegex compile(std::string_view pattern);

  /// True when the pattern matches anywhere in `text`.
  bool search(std::string_view text) const;

  const std::string& pattern() const noexcept { return pattern_; }
  std::size_t program_size() const noexcept { return program_.size(); }

  struct Inst {
    enum class Op : std::uint8_t { kClass, kSplit, kJmp, kMatch, kBol, kEol, kWordB, kNotWordB };
    Op op;
    std::uint32_t x = 0;  // class index, or first target
    std::uint32_t y = 0;  // second target for kSplit
  };

 private:
  LinearRegex() = default;

  std::string pattern_;
  std::vector<Inst> program_;
  std::vector<std::bitset<256>> classes_;

  friend class RegexCompiler;
};

}  // namespace rulegen
