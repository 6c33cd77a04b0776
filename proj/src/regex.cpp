#include "rulegen/regex.hpp"

#include <cctype>
#include <optional>
#include <variant>

#include "rulegen/errors.hpp"

namespace rulegen {

namespace {

constexpr int kMaxRepeat = 1000;
constexpr std::size_t kMaxProgram = 20000;

using ByteSet = std::bitset<256>;

struct Node;
using NodePtr = std::unique_ptr<Node>;

enum class AssertKind { kBol, kEol, kWordB, kNotWordB };

struct Node {
  enum class Kind { kEmpty, kSet, kConcat, kAlt, kRepeat, kAssert } kind = Kind::kEmpty;
  ByteSet set;
  std::vector<NodePtr> children;
  int min = 0;
  int max = 0;  // -1 = unbounded
  AssertKind assertion = AssertKind::kBol;
};

NodePtr make(Node::Kind k) {
  auto n = std::make_unique<Node>();
  n->kind = k;
  return n;
}

ByteSet digit_set() {
  ByteSet s;
  for (int c = '0'; c <= '9'; ++c) s.set(c);
  return s;
}
ByteSet word_set() {
  ByteSet s = digit_set();
  for (int c = 'a'; c <= 'z'; ++c) s.set(c);
  for (int c = 'A'; c <= 'Z'; ++c) s.set(c);
  s.set('_');
  return s;
}
ByteSet space_set() {
  ByteSet s;
  for (char c : std::string_view(" \t\n\r\f\v")) s.set(static_cast<unsigned char>(c));
  return s;
}

bool is_word(unsigned char c) {
  return std::isalnum(c) || c == '_';
}

class Parser {
 public:
  explicit Parser(std::string_view p) : p_(p) {}

  NodePtr parse_all(bool& icase_out) {
    if (p_.starts_with("(?i)")) {
      icase_ = true;
      pos_ = 4;
    }
    icase_out = icase_;
    auto n = parse_alt();
    if (pos_ < p_.size()) fail("unmatched ')'");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw RegexError("invalid regex '" + std::string(p_) + "' at offset " +
                     std::to_string(pos_) + ": " + what);
  }

  bool eof() const { return pos_ >= p_.size(); }
  char peek() const { return p_[pos_]; }

  NodePtr parse_alt() {
    std::vector<NodePtr> branches;
    branches.push_back(parse_concat());
    while (!eof() && peek() == '|') {
      ++pos_;
      branches.push_back(parse_concat());
    }
    if (branches.size() == 1) return std::move(branches.front());
    auto n = make(Node::Kind::kAlt);
    n->children = std::move(branches);
    return n;
  }

  NodePtr parse_concat() {
    auto n = make(Node::Kind::kConcat);
    while (!eof() && peek() != '|' && peek() != ')') n->children.push_back(parse_repeat());
    return n;
  }

  std::optional<std::pair<int, int>> try_braces() {
    // {n}, {n,}, {n,m}; anything else is a literal '{'.
    std::size_t i = pos_ + 1;
    auto read_int = [&](int& out) {
      const std::size_t start = i;
      long v = 0;
      while (i < p_.size() && std::isdigit(static_cast<unsigned char>(p_[i]))) {
        v = v * 10 + (p_[i] - '0');
        if (v > 100000) v = 100000;
        ++i;
      }
      out = static_cast<int>(v);
      return i > start;
    };
    int lo = 0, hi = 0;
    if (!read_int(lo)) return std::nullopt;
    if (i < p_.size() && p_[i] == '}') {
      hi = lo;
    } else if (i < p_.size() && p_[i] == ',') {
      ++i;
      if (i < p_.size() && p_[i] == '}') {
        hi = -1;
      } else if (!read_int(hi) || i >= p_.size() || p_[i] != '}') {
        return std::nullopt;
      }
    } else {
      return std::nullopt;
    }
    pos_ = i + 1;
    if (lo > kMaxRepeat || hi > kMaxRepeat) fail("repetition count exceeds 1000");
    if (hi != -1 && hi < lo) fail("repetition range out of order");
    return std::make_pair(lo, hi);
  }

  static bool is_quantifier_start(char c) { return c == '*' || c == '+' || c == '?'; }

  NodePtr parse_repeat() {
    if (is_quantifier_start(peek())) fail("nothing to repeat");
    auto atom = parse_atom();
    bool quantified = false;
    while (!eof()) {
      int lo = 0, hi = 0;
      const char c = peek();
      if (c == '*') {
        lo = 0, hi = -1, ++pos_;
      } else if (c == '+') {
        lo = 1, hi = -1, ++pos_;
      } else if (c == '?') {
        lo = 0, hi = 1, ++pos_;
      } else if (c == '{') {
        auto r = try_braces();
        if (!r) break;
        lo = r->first, hi = r->second;
      } else {
        break;
      }
      if (quantified) fail("nothing to repeat");
      quantified = true;
      if (atom->kind == Node::Kind::kAssert) fail("cannot repeat an anchor");
      auto rep = make(Node::Kind::kRepeat);
      rep->min = lo;
      rep->max = hi;
      rep->children.push_back(std::move(atom));
      atom = std::move(rep);
      if (!eof() && peek() == '?') ++pos_;  // lazy: same accept set
    }
    return atom;
  }

  ByteSet fold(ByteSet s) const {
    if (!icase_) return s;
    for (int c = 'a'; c <= 'z'; ++c) {
      const int u = c - 'a' + 'A';
      if (s.test(c) || s.test(u)) {
        s.set(c);
        s.set(u);
      }
    }
    return s;
  }

  NodePtr set_node(ByteSet s) {
    auto n = make(Node::Kind::kSet);
    n->set = fold(s);
    return n;
  }

  NodePtr literal(unsigned char c) {
    ByteSet s;
    s.set(c);
    return set_node(s);
  }

  int parse_hex2() {
    auto hv = [](char c) {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      return -1;
    };
    if (pos_ + 2 > p_.size()) fail("truncated \\x escape");
    const int hi = hv(p_[pos_]);
    const int lo = hv(p_[pos_ + 1]);
    if (hi < 0 || lo < 0) fail("invalid \\x escape");
    pos_ += 2;
    return hi * 16 + lo;
  }

  // Parses the escape after '\'. Returns a set; sets `is_assert` for \b \B.
  ByteSet parse_escape(bool in_class, std::optional<AssertKind>& assertion) {
    if (eof()) fail("trailing backslash");
    const char c = p_[pos_++];
    ByteSet s;
    switch (c) {
      case 'd': return digit_set();
      case 'D': return ~digit_set();
      case 'w': return word_set();
      case 'W': return ~word_set();
      case 's': return space_set();
      case 'S': return ~space_set();
      case 'n': s.set('\n'); return s;
      case 'r': s.set('\r'); return s;
      case 't': s.set('\t'); return s;
      case 'f': s.set('\f'); return s;
      case 'v': s.set('\v'); return s;
      case 'x': s.set(static_cast<std::size_t>(parse_hex2())); return s;
      case 'b':
      case 'B':
        if (in_class) fail("\\b is not allowed inside a class");
        assertion = c == 'b' ? AssertKind::kWordB : AssertKind::kNotWordB;
        return s;
      default: break;
    }
    if (c >= '1' && c <= '9') fail("backreferences are not supported");
    if (c == '0') {
      s.set(0);
      return s;
    }
    if (std::isalnum(static_cast<unsigned char>(c))) fail(std::string("unknown escape \\") + c);
    s.set(static_cast<unsigned char>(c));
    return s;
  }

  NodePtr parse_class() {
    // '[' already consumed.
    bool negate = false;
    if (!eof() && peek() == '^') {
      negate = true;
      ++pos_;
    }
    ByteSet s;
    bool first = true;
    for (;;) {
      if (eof()) fail("unterminated character class");
      char c = peek();
      if (c == ']' && !first) {
        ++pos_;
        break;
      }
      first = false;
      ByteSet item;
      int lo = -1;
      if (c == '\\') {
        ++pos_;
        std::optional<AssertKind> unused;
        item = parse_escape(true, unused);
        if (item.count() == 1)
          for (int k = 0; k < 256; ++k)
            if (item.test(k)) lo = k;
      } else {
        ++pos_;
        lo = static_cast<unsigned char>(c);
        item.set(static_cast<std::size_t>(lo));
      }
      // Range?
      if (lo >= 0 && pos_ + 1 < p_.size() && peek() == '-' && p_[pos_ + 1] != ']') {
        ++pos_;
        int hi = -1;
        if (peek() == '\\') {
          ++pos_;
          std::optional<AssertKind> unused;
          ByteSet h = parse_escape(true, unused);
          if (h.count() != 1) fail("invalid class range");
          for (int k = 0; k < 256; ++k)
            if (h.test(k)) hi = k;
        } else {
          hi = static_cast<unsigned char>(p_[pos_++]);
        }
        if (hi < lo) fail("class range out of order");
        for (int k = lo; k <= hi; ++k) item.set(static_cast<std::size_t>(k));
      }
      s |= item;
    }
    s = fold(s);
    if (negate) s = ~s;
    auto n = make(Node::Kind::kSet);
    n->set = s;
    return n;
  }

  NodePtr parse_atom() {
    const char c = p_[pos_++];
    switch (c) {
      case '(': {
        if (!eof() && peek() == '?') {
          if (pos_ + 1 < p_.size() && p_[pos_ + 1] == ':') {
            pos_ += 2;
          } else {
            fail("lookaround and inline flags are not supported");
          }
        }
        auto inner = parse_alt();
        if (eof() || peek() != ')') fail("missing ')'");
        ++pos_;
        return inner;
      }
      case ')': fail("unmatched ')'");
      case '[': return parse_class();
      case '.': {
        ByteSet s;
        s.set();
        s.reset('\n');
        auto n = make(Node::Kind::kSet);
        n->set = s;
        return n;
      }
      case '^': {
        auto n = make(Node::Kind::kAssert);
        n->assertion = AssertKind::kBol;
        return n;
      }
      case '$': {
        auto n = make(Node::Kind::kAssert);
        n->assertion = AssertKind::kEol;
        return n;
      }
      case '\\': {
        std::optional<AssertKind> assertion;
        ByteSet s = parse_escape(false, assertion);
        if (assertion) {
          auto n = make(Node::Kind::kAssert);
          n->assertion = *assertion;
          return n;
        }
        return set_node(s);
      }
      default: return literal(static_cast<unsigned char>(c));
    }
  }

  std::string_view p_;
  std::size_t pos_ = 0;
  bool icase_ = false;
};

}  // namespace

class RegexCompiler {
 public:
  explicit RegexCompiler(LinearRegex& re) : re_(re) {}

  void emit_program(const Node& root) {
    emit(root);
    push({LinearRegex::Inst::Op::kMatch});
  }

 private:
  using Inst = LinearRegex::Inst;

  std::uint32_t pc() const { return static_cast<std::uint32_t>(re_.program_.size()); }

  std::uint32_t push(Inst inst) {
    if (re_.program_.size() >= kMaxProgram)
      throw RegexError("regex '" + re_.pattern_ + "' compiles to more than 20000 instructions");
    re_.program_.push_back(inst);
    return pc() - 1;
  }

  void emit(const Node& n) {
    switch (n.kind) {
      case Node::Kind::kEmpty: return;
      case Node::Kind::kSet: {
        re_.classes_.push_back(n.set);
        push({Inst::Op::kClass, static_cast<std::uint32_t>(re_.classes_.size() - 1)});
        return;
      }
      case Node::Kind::kConcat:
        for (const auto& c : n.children) emit(*c);
        return;
      case Node::Kind::kAlt: {
        // split L1, next; L1: a; jmp end; next: split L2, ... ; last
        std::vector<std::uint32_t> jumps;
        for (std::size_t i = 0; i + 1 < n.children.size(); ++i) {
          const auto split = push({Inst::Op::kSplit});
          re_.program_[split].x = pc();
          emit(*n.children[i]);
          jumps.push_back(push({Inst::Op::kJmp}));
          re_.program_[split].y = pc();
        }
        emit(*n.children.back());
        for (auto j : jumps) re_.program_[j].x = pc();
        return;
      }
      case Node::Kind::kRepeat: {
        const Node& body = *n.children.front();
        for (int i = 0; i < n.min; ++i) emit(body);
        if (n.max == -1) {
          const auto split = push({Inst::Op::kSplit});
          re_.program_[split].x = pc();
          emit(body);
          push({Inst::Op::kJmp, split});
          re_.program_[split].y = pc();
        } else {
          std::vector<std::uint32_t> splits;
          for (int i = n.min; i < n.max; ++i) {
            const auto split = push({Inst::Op::kSplit});
            re_.program_[split].x = pc();
            splits.push_back(split);
            emit(body);
          }
          for (auto s : splits) re_.program_[s].y = pc();
        }
        return;
      }
      case Node::Kind::kAssert: {
        switch (n.assertion) {
          case AssertKind::kBol: push({Inst::Op::kBol}); break;
          case AssertKind::kEol: push({Inst::Op::kEol}); break;
          case AssertKind::kWordB: push({Inst::Op::kWordB}); break;
          case AssertKind::kNotWordB: push({Inst::Op::kNotWordB}); break;
        }
        return;
      }
    }
  }

  LinearRegex& re_;
};

LinearRegex LinearRegex::compile(std::string_view pattern) {
  LinearRegex re;
  re.pattern_ = std::string(pattern);
  bool icase = false;
  Parser parser(pattern);
  auto root = parser.parse_all(icase);
  RegexCompiler(re).emit_program(*root);
  return re;
}

namespace {

// Sparse set of program counters (Briggs-Torczon), cleared in O(1).
class ThreadSet {
 public:
  explicit ThreadSet(std::size_t n) : dense_(n), sparse_(n) {}
  bool contains(std::uint32_t pc) const {
    const auto i = sparse_[pc];
    return i < size_ && dense_[i] == pc;
  }
  void insert(std::uint32_t pc) {
    sparse_[pc] = static_cast<std::uint32_t>(size_);
    dense_[size_++] = pc;
  }
  void clear() { size_ = 0; }
  std::size_t size() const { return size_; }
  std::uint32_t operator[](std::size_t i) const { return dense_[i]; }

 private:
  std::vector<std::uint32_t> dense_;
  std::vector<std::uint32_t> sparse_;
  std::size_t size_ = 0;
};

}  // namespace

bool LinearRegex::search(std::string_view text) const {
  const std::size_t n = program_.size();
  ThreadSet current(n), next(n);
  std::vector<std::uint32_t> stack;
  stack.reserve(n);

  // Follows epsilon edges from `start` at position `i`; returns true on kMatch.
  auto add = [&](ThreadSet& set, std::uint32_t start, std::size_t i) {
    const bool prev_word = i > 0 && is_word(static_cast<unsigned char>(text[i - 1]));
    const bool next_word = i < text.size() && is_word(static_cast<unsigned char>(text[i]));
    stack.clear();
    stack.push_back(start);
    while (!stack.empty()) {
      const auto pc = stack.back();
      stack.pop_back();
      if (set.contains(pc)) continue;
      set.insert(pc);
      const Inst& inst = program_[pc];
      switch (inst.op) {
        case Inst::Op::kMatch: return true;
        case Inst::Op::kJmp: stack.push_back(inst.x); break;
        case Inst::Op::kSplit:
          stack.push_back(inst.y);
          stack.push_back(inst.x);
          break;
        case Inst::Op::kBol:
          if (i == 0) stack.push_back(pc + 1);
          break;
        case Inst::Op::kEol:
          if (i == text.size()) stack.push_back(pc + 1);
          break;
        case Inst::Op::kWordB:
          if (prev_word != next_word) stack.push_back(pc + 1);
          break;
        case Inst::Op::kNotWordB:
          if (prev_word == next_word) stack.push_back(pc + 1);
          break;
        case Inst::Op::kClass: break;
      }
    }
    return false;
  };

  for (std::size_t i = 0;; ++i) {
    if (add(current, 0, i)) return true;
    if (i == text.size()) return false;
    const auto c = static_cast<unsigned char>(text[i]);
    next.clear();
    for (std::size_t k = 0; k < current.size(); ++k) {
      const auto pc = current[k];
      const Inst& inst = program_[pc];
      if (inst.op == Inst::Op::kClass && classes_[inst.x].test(c)) {
        if (add(next, pc + 1, i + 1)) return true;
      }
    }
    std::swap(current, next);
  }
}

}  // namespace rulegen
