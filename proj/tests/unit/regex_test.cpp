#include <chrono>
#include <regex>
#include <string>

#include <gtest/gtest.h>

#include "rulegen/errors.hpp"
#include "rulegen/hashing.hpp"
#include "rulegen/regex.hpp"

using rulegen::LinearRegex;
using rulegen::RegexError;

namespace {
bool search(const char* pattern, const std::string& text) {
  return LinearRegex::compile(pattern).search(text);
}
}  // namespace

TEST(LinearRegex, Basics) {
  EXPECT_TRUE(search("abc", "xxabcxx"));
  EXPECT_FALSE(search("^abc", "xabc"));
  EXPECT_TRUE(search("abc$", "xabc"));
  EXPECT_FALSE(search("abc$", "abcx"));
  EXPECT_TRUE(search("a.c", "a-c"));
  EXPECT_TRUE(search("^$", ""));
  EXPECT_TRUE(search("", "anything"));
}

TEST(LinearRegex, ClassesAndEscapes) {
  EXPECT_TRUE(search("[a-c]+\\d", "zzbb7"));
  EXPECT_FALSE(search("^[^0-9]+$", "ab1"));
  EXPECT_TRUE(search("\\w+\\s\\W", "ab !"));
  EXPECT_TRUE(search("\\x41", "A"));
  EXPECT_TRUE(search("\\.\\./", "../etc"));
  EXPECT_FALSE(search("\\.\\./", "a/b"));
  EXPECT_TRUE(search("[\\d.]+", "1.2"));
}

TEST(LinearRegex, WordBoundaries) {
  EXPECT_TRUE(search("\\bid\\b", ";id"));
  EXPECT_FALSE(search("\\bid\\b", "idle"));
  EXPECT_TRUE(search("\\Bdl", "idle"));
}

TEST(LinearRegex, Repetition) {
  EXPECT_TRUE(search("^a{2,3}$", "aaa"));
  EXPECT_FALSE(search("^a{2,3}$", "aaaa"));
  EXPECT_TRUE(search("^a{2}$", "aa"));
  EXPECT_TRUE(search("^a{2,}$", "aaaaa"));
  EXPECT_TRUE(search("^(?:ab)+?$", "abab"));
  EXPECT_TRUE(search("^x?y*z+$", "z"));
}

TEST(LinearRegex, AlternationAndGroups) {
  EXPECT_TRUE(search("(;|\\||&&)\\s*(id|cat)\\b", "a && cat /etc"));
  EXPECT_FALSE(search("^(foo|bar)$", "foobar"));
}

TEST(LinearRegex, CaseInsensitivePrefix) {
  EXPECT_TRUE(search("(?i)union(\\s|\\+|/\\*\\*/)+select", "1 UNION/**/SeLeCt 2"));
  EXPECT_FALSE(search("union select", "UNION SELECT"));
  EXPECT_TRUE(search("(?i)[a-c]", "B"));
}

TEST(LinearRegex, RejectsUnsupportedSyntax) {
  EXPECT_THROW(LinearRegex::compile("(a)\\1"), RegexError);
  EXPECT_THROW(LinearRegex::compile("(?=a)"), RegexError);
  EXPECT_THROW(LinearRegex::compile("(?<!a)b"), RegexError);
  EXPECT_THROW(LinearRegex::compile("(ab"), RegexError);
  EXPECT_THROW(LinearRegex::compile("ab)"), RegexError);
  EXPECT_THROW(LinearRegex::compile("a{1001}"), RegexError);
  EXPECT_THROW(LinearRegex::compile("[z-a]"), RegexError);
  EXPECT_THROW(LinearRegex::compile("*a"), RegexError);
  EXPECT_THROW(LinearRegex::compile("(?:a{1000}){1000}"), RegexError);
}

TEST(LinearRegex, PathologicalPatternIsLinear) {
  // Exponential for a backtracking engine.
  const auto re = LinearRegex::compile("^(a|a)*(a|a)*b$");
  const std::string text(20000, 'a');
  const auto start = std::chrono::steady_clock::now();
  EXPECT_FALSE(re.search(text));
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(2));
}

TEST(LinearRegex, AgreesWithStdRegexOnRandomInputs) {
  const char* patterns[] = {"a+b", "^ab*c?$", "(a|bc)+", "[^ab]{2}", "\\bab", "a.b",
                            "(?:ab|ba){2,3}", "^a*$", "b\\W", "[0-9]+\\s"};
  const char alphabet[] = "ab c1;";
  rulegen::SeededStream rng(11);
  for (const char* p : patterns) {
    const auto ours = LinearRegex::compile(p);
    const std::regex theirs(p, std::regex::ECMAScript);
    for (int i = 0; i < 300; ++i) {
      std::string s;
      const int n = static_cast<int>(rng.uniform() * 9);
      for (int k = 0; k < n; ++k) s.push_back(alphabet[static_cast<int>(rng.uniform() * 6)]);
      EXPECT_EQ(ours.search(s), std::regex_search(s, theirs)) << p << " on '" << s << "'";
    }
  }
}
