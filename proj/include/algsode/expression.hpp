/**
 * @file expression.hpp
 * @brief Scalar expression trees over coordinates and named parameters.
 *
 * Grammar:
 *   expr   := term (('+'|'-') term)*
 *   term   := factor (('*'|'/') factor)*
 *   factor := base ('^' factor)?
 *   base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' | '-' base
 *
 * '^' is right-associative and unary minus applies to a base, so "-x^2" is (-x)^2.
 * Functions: sin cos exp sqrt.
 */
#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "algsode/error.hpp"

namespace algsode {

class Expression {
 public:
  enum class Kind { number, symbol, add, sub, mul, div, pow, neg, call };
  enum class Function { sin, cos, exp, sqrt };

  Expression() : Expression(make_number(0.0)) {}

  [[nodiscard]] static Expression parse(std::string_view text);

  [[nodiscard]] static Expression constant(double value) { return Expression(make_number(value)); }
  [[nodiscard]] static Expression variable(std::string name) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::symbol;
    n->name = std::move(name);
    return Expression(std::move(n));
  }

  // Simplifying constructors (fold constants, drop neutral elements).
  friend Expression operator+(const Expression& a, const Expression& b);
  friend Expression operator-(const Expression& a, const Expression& b);
  friend Expression operator*(const Expression& a, const Expression& b);
  friend Expression operator/(const Expression& a, const Expression& b);
  friend Expression operator-(const Expression& a);
  [[nodiscard]] static Expression power(const Expression& base, const Expression& exponent);
  [[nodiscard]] static Expression call(Function fn, const Expression& arg);

  [[nodiscard]] Kind kind() const { return node_->kind; }
  [[nodiscard]] bool is_number() const { return node_->kind == Kind::number; }
  [[nodiscard]] bool is_number(double v) const { return is_number() && node_->value == v; }
  [[nodiscard]] double number_value() const { return node_->value; }

  /// Canonical text; parse(str()) rebuilds the same tree up to negative literals.
  [[nodiscard]] std::string str() const;

  /// Symbols referenced by the expression (after binding: only unresolved ones remain named).
  [[nodiscard]] std::set<std::string> symbols() const;
  [[nodiscard]] bool depends_on(std::string_view name) const;
  [[nodiscard]] bool is_constant() const { return symbols().empty(); }

  /// Resolve symbols: parameters become literals, coordinates become slot indices.
  [[nodiscard]] Expression bind(const std::map<std::string, int>& slots,
                                const std::map<std::string, double>& parameters = {}) const;

  /// Evaluate a bound expression. Division by zero, sqrt of a negative number and
  /// non-finite powers raise ErrorCode::evaluation_domain.
  [[nodiscard]] double evaluate(std::span<const double> slots) const { return eval(*node_, slots); }

  /// Symbolic derivative, or nullopt when it would need a function outside the grammar
  /// (a power whose base and exponent both vary).
  [[nodiscard]] std::optional<Expression> derivative(std::string_view name) const;

  /// Structural equality.
  [[nodiscard]] bool same_as(const Expression& other) const { return equal(*node_, *other.node_); }

 private:
  struct Node {
    Kind kind = Kind::number;
    double value = 0.0;
    std::string name;
    int slot = -1;
    Function fn = Function::sin;
    std::shared_ptr<const Node> lhs;
    std::shared_ptr<const Node> rhs;
  };
  using NodePtr = std::shared_ptr<const Node>;

  explicit Expression(NodePtr node) : node_(std::move(node)) {}

  static NodePtr make_number(double v) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::number;
    n->value = v;
    return n;
  }
  static NodePtr make_binary(Kind k, NodePtr a, NodePtr b) {
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->lhs = std::move(a);
    n->rhs = std::move(b);
    return n;
  }
  static NodePtr make_unary(Kind k, NodePtr a) {
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->lhs = std::move(a);
    return n;
  }
  static NodePtr make_call(Function fn, NodePtr a) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::call;
    n->fn = fn;
    n->lhs = std::move(a);
    return n;
  }

  static double eval(const Node& n, std::span<const double> slots);
  static bool equal(const Node& a, const Node& b);
  static void collect(const Node& n, std::set<std::string>& out);
  static void print(const Node& n, std::string& out);
  static void print_operand(const Node& n, int min_level, std::string& out);

  class Parser;
  friend class Parser;

  NodePtr node_;
};

[[nodiscard]] inline std::string_view function_name(Expression::Function fn) {
  switch (fn) {
    case Expression::Function::sin: return "sin";
    case Expression::Function::cos: return "cos";
    case Expression::Function::exp: return "exp";
    case Expression::Function::sqrt: return "sqrt";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parser

class Expression::Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) { advance(); }

  NodePtr parse_all() {
    if (tok_.kind == TokKind::end) fail("empty expression");
    NodePtr e = expr();
    if (tok_.kind != TokKind::end) fail("unexpected token");
    return e;
  }

 private:
  enum class TokKind { number, ident, op, end };
  struct Token {
    TokKind kind = TokKind::end;
    std::string text;
    double value = 0.0;
    int line = 1;
    int column = 1;
  };

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, tok_.line, tok_.column, tok_.kind == TokKind::end ? "<end>" : tok_.text);
  }

  void advance() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      if (text_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
      ++pos_;
    }
    tok_ = Token{};
    tok_.line = line_;
    tok_.column = col_;
    if (pos_ >= text_.size()) {
      tok_.kind = TokKind::end;
      return;
    }
    const std::size_t start = pos_;
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
        ++pos_;
      }
      if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
        std::size_t p = pos_ + 1;
        if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
        if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
          pos_ = p;
          while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        }
      }
      tok_.kind = TokKind::number;
      tok_.text = std::string(text_.substr(start, pos_ - start));
      const auto res = std::from_chars(tok_.text.data(), tok_.text.data() + tok_.text.size(), tok_.value);
      if (res.ec != std::errc() || res.ptr != tok_.text.data() + tok_.text.size()) {
        fail("malformed number");
      }
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
        ++pos_;
      }
      tok_.kind = TokKind::ident;
      tok_.text = std::string(text_.substr(start, pos_ - start));
    } else if (std::string_view("+-*/^()").find(c) != std::string_view::npos) {
      ++pos_;
      tok_.kind = TokKind::op;
      tok_.text = std::string(1, c);
    } else {
      tok_.kind = TokKind::op;
      tok_.text = std::string(1, c);
      fail("unexpected character");
    }
    col_ += static_cast<int>(pos_ - start);
  }

  bool is_op(char c) const { return tok_.kind == TokKind::op && tok_.text[0] == c; }

  NodePtr expr() {
    NodePtr lhs = term();
    while (is_op('+') || is_op('-')) {
      const Kind k = is_op('+') ? Kind::add : Kind::sub;
      advance();
      lhs = make_binary(k, lhs, term());
    }
    return lhs;
  }

  NodePtr term() {
    NodePtr lhs = factor();
    while (is_op('*') || is_op('/')) {
      const Kind k = is_op('*') ? Kind::mul : Kind::div;
      advance();
      lhs = make_binary(k, lhs, factor());
    }
    return lhs;
  }

  NodePtr factor() {
    NodePtr b = base();
    if (is_op('^')) {
      advance();
      return make_binary(Kind::pow, b, factor());
    }
    return b;
  }

  NodePtr base() {
    if (tok_.kind == TokKind::number) {
      NodePtr n = make_number(tok_.value);
      advance();
      return n;
    }
    if (tok_.kind == TokKind::ident) {
      const Token id = tok_;
      advance();
      if (is_op('(')) {
        Function fn{};
        if (id.text == "sin") fn = Function::sin;
        else if (id.text == "cos") fn = Function::cos;
        else if (id.text == "exp") fn = Function::exp;
        else if (id.text == "sqrt") fn = Function::sqrt;
        else throw ParseError("unknown function", id.line, id.column, id.text);
        advance();
        NodePtr arg = expr();
        if (!is_op(')')) fail("expected ')'");
        advance();
        return make_call(fn, arg);
      }
      auto n = std::make_shared<Node>();
      n->kind = Kind::symbol;
      n->name = id.text;
      return n;
    }
    if (is_op('(')) {
      advance();
      NodePtr e = expr();
      if (!is_op(')')) fail("expected ')'");
      advance();
      return e;
    }
    if (is_op('-')) {
      advance();
      return make_unary(Kind::neg, base());
    }
    fail(tok_.kind == TokKind::end ? "unexpected end of expression" : "unexpected token");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  Token tok_;
};

inline Expression Expression::parse(std::string_view text) { return Expression(Parser(text).parse_all()); }

// ---------------------------------------------------------------------------
// Construction helpers

inline Expression operator+(const Expression& a, const Expression& b) {
  if (a.is_number() && b.is_number()) return Expression::constant(a.number_value() + b.number_value());
  if (a.is_number(0.0)) return b;
  if (b.is_number(0.0)) return a;
  return Expression(Expression::make_binary(Expression::Kind::add, a.node_, b.node_));
}

inline Expression operator-(const Expression& a, const Expression& b) {
  if (a.is_number() && b.is_number()) return Expression::constant(a.number_value() - b.number_value());
  if (b.is_number(0.0)) return a;
  if (a.is_number(0.0)) return -b;
  return Expression(Expression::make_binary(Expression::Kind::sub, a.node_, b.node_));
}

inline Expression operator*(const Expression& a, const Expression& b) {
  if (a.is_number() && b.is_number()) return Expression::constant(a.number_value() * b.number_value());
  if (a.is_number(0.0) || b.is_number(0.0)) return Expression::constant(0.0);
  if (a.is_number(1.0)) return b;
  if (b.is_number(1.0)) return a;
  if (a.is_number(-1.0)) return -b;
  if (b.is_number(-1.0)) return -a;
  return Expression(Expression::make_binary(Expression::Kind::mul, a.node_, b.node_));
}

inline Expression operator/(const Expression& a, const Expression& b) {
  if (a.is_number() && b.is_number() && b.number_value() != 0.0) {
    return Expression::constant(a.number_value() / b.number_value());
  }
  if (a.is_number(0.0)) return Expression::constant(0.0);
  if (b.is_number(1.0)) return a;
  return Expression(Expression::make_binary(Expression::Kind::div, a.node_, b.node_));
}

inline Expression operator-(const Expression& a) {
  if (a.is_number()) return Expression::constant(-a.number_value());
  if (a.kind() == Expression::Kind::neg) return Expression(a.node_->lhs);
  return Expression(Expression::make_unary(Expression::Kind::neg, a.node_));
}

inline Expression Expression::power(const Expression& base, const Expression& exponent) {
  if (exponent.is_number(0.0)) return constant(1.0);
  if (exponent.is_number(1.0)) return base;
  if (base.is_number() && exponent.is_number()) {
    const double v = std::pow(base.number_value(), exponent.number_value());
    if (std::isfinite(v)) return constant(v);
  }
  return Expression(make_binary(Kind::pow, base.node_, exponent.node_));
}

inline Expression Expression::call(Function fn, const Expression& arg) {
  return Expression(make_call(fn, arg.node_));
}

// ---------------------------------------------------------------------------
// Evaluation

inline double Expression::eval(const Node& n, std::span<const double> slots) {
  switch (n.kind) {
    case Kind::number:
      return n.value;
    case Kind::symbol:
      if (n.slot < 0 || static_cast<std::size_t>(n.slot) >= slots.size()) {
        throw Error(ErrorCode::unknown_symbol, "unbound symbol '" + n.name + "'");
      }
      return slots[static_cast<std::size_t>(n.slot)];
    case Kind::add:
      return eval(*n.lhs, slots) + eval(*n.rhs, slots);
    case Kind::sub:
      return eval(*n.lhs, slots) - eval(*n.rhs, slots);
    case Kind::mul:
      return eval(*n.lhs, slots) * eval(*n.rhs, slots);
    case Kind::div: {
      const double den = eval(*n.rhs, slots);
      if (den == 0.0) throw Error(ErrorCode::evaluation_domain, "division by zero");
      return eval(*n.lhs, slots) / den;
    }
    case Kind::pow: {
      const double b = eval(*n.lhs, slots);
      const double e = eval(*n.rhs, slots);
      if (e == 2.0) return b * b;
      const double v = std::pow(b, e);
      if (!std::isfinite(v)) throw Error(ErrorCode::evaluation_domain, "non-finite power");
      return v;
    }
    case Kind::neg:
      return -eval(*n.lhs, slots);
    case Kind::call: {
      const double a = eval(*n.lhs, slots);
      switch (n.fn) {
        case Function::sin: return std::sin(a);
        case Function::cos: return std::cos(a);
        case Function::exp: return std::exp(a);
        case Function::sqrt:
          if (a < 0.0) throw Error(ErrorCode::evaluation_domain, "sqrt of a negative number");
          return std::sqrt(a);
      }
    }
  }
  return 0.0;
}

inline bool Expression::equal(const Node& a, const Node& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case Kind::number: return a.value == b.value;
    case Kind::symbol: return a.name == b.name;
    case Kind::neg: return equal(*a.lhs, *b.lhs);
    case Kind::call: return a.fn == b.fn && equal(*a.lhs, *b.lhs);
    default: return equal(*a.lhs, *b.lhs) && equal(*a.rhs, *b.rhs);
  }
}

inline void Expression::collect(const Node& n, std::set<std::string>& out) {
  if (n.kind == Kind::symbol) out.insert(n.name);
  if (n.lhs) collect(*n.lhs, out);
  if (n.rhs) collect(*n.rhs, out);
}

inline std::set<std::string> Expression::symbols() const {
  std::set<std::string> out;
  collect(*node_, out);
  return out;
}

inline bool Expression::depends_on(std::string_view name) const {
  return symbols().count(std::string(name)) > 0;
}

inline Expression Expression::bind(const std::map<std::string, int>& slots,
                                   const std::map<std::string, double>& parameters) const {
  struct Binder {
    const std::map<std::string, int>& slots;
    const std::map<std::string, double>& params;
    NodePtr operator()(const NodePtr& n) const {
      if (n->kind == Kind::symbol) {
        if (auto it = slots.find(n->name); it != slots.end()) {
          auto b = std::make_shared<Node>(*n);
          b->slot = it->second;
          return b;
        }
        if (auto it = params.find(n->name); it != params.end()) return make_number(it->second);
        throw Error(ErrorCode::unknown_symbol, "unknown symbol '" + n->name + "'");
      }
      if (!n->lhs) return n;
      auto b = std::make_shared<Node>(*n);
      b->lhs = (*this)(n->lhs);
      if (n->rhs) b->rhs = (*this)(n->rhs);
      return b;
    }
  };
  return Expression(Binder{slots, parameters}(node_));
}

// ---------------------------------------------------------------------------
// Differentiation

inline std::optional<Expression> Expression::derivative(std::string_view name) const {
  const Node& n = *node_;
  auto sub = [](const NodePtr& p) { return Expression(p); };
  switch (n.kind) {
    case Kind::number:
      return constant(0.0);
    case Kind::symbol:
      return constant(n.name == name ? 1.0 : 0.0);
    case Kind::add:
    case Kind::sub: {
      auto da = sub(n.lhs).derivative(name);
      auto db = sub(n.rhs).derivative(name);
      if (!da || !db) return std::nullopt;
      return n.kind == Kind::add ? *da + *db : *da - *db;
    }
    case Kind::mul: {
      auto da = sub(n.lhs).derivative(name);
      auto db = sub(n.rhs).derivative(name);
      if (!da || !db) return std::nullopt;
      return *da * sub(n.rhs) + sub(n.lhs) * *db;
    }
    case Kind::div: {
      auto da = sub(n.lhs).derivative(name);
      auto db = sub(n.rhs).derivative(name);
      if (!da || !db) return std::nullopt;
      const Expression b = sub(n.rhs);
      if (db->is_number(0.0)) return *da / b;
      return (*da * b - sub(n.lhs) * *db) / power(b, constant(2.0));
    }
    case Kind::pow: {
      const Expression b = sub(n.lhs);
      const Expression e = sub(n.rhs);
      const bool base_varies = b.depends_on(name);
      const bool exp_varies = e.depends_on(name);
      if (!base_varies && !exp_varies) return constant(0.0);
      if (!exp_varies) {
        auto db = b.derivative(name);
        if (!db) return std::nullopt;
        return e * power(b, e - constant(1.0)) * *db;
      }
      if (!base_varies && b.is_number() && b.number_value() > 0.0) {
        auto de = e.derivative(name);
        if (!de) return std::nullopt;
        return *this * constant(std::log(b.number_value())) * *de;
      }
      return std::nullopt;
    }
    case Kind::neg: {
      auto da = sub(n.lhs).derivative(name);
      if (!da) return std::nullopt;
      return -*da;
    }
    case Kind::call: {
      const Expression a = sub(n.lhs);
      auto da = a.derivative(name);
      if (!da) return std::nullopt;
      if (da->is_number(0.0)) return constant(0.0);
      switch (n.fn) {
        case Function::sin: return call(Function::cos, a) * *da;
        case Function::cos: return -(call(Function::sin, a) * *da);
        case Function::exp: return *this * *da;
        case Function::sqrt: return *da / (constant(2.0) * *this);
      }
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Printing

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// Precedence levels: 1 = expr, 2 = term, 3 = factor, 4 = base.
inline void Expression::print_operand(const Node& n, int min_level, std::string& out) {
  int level = 4;
  switch (n.kind) {
    case Kind::add:
    case Kind::sub: level = 1; break;
    case Kind::mul:
    case Kind::div: level = 2; break;
    case Kind::pow: level = 3; break;
    default: level = 4; break;
  }
  if (level < min_level) {
    out += '(';
    print(n, out);
    out += ')';
  } else {
    print(n, out);
  }
}

inline void Expression::print(const Node& n, std::string& out) {
  switch (n.kind) {
    case Kind::number:
      out += detail::format_number(n.value);
      return;
    case Kind::symbol:
      out += n.name;
      return;
    case Kind::add:
    case Kind::sub:
      print_operand(*n.lhs, 1, out);
      out += n.kind == Kind::add ? " + " : " - ";
      print_operand(*n.rhs, 2, out);
      return;
    case Kind::mul:
    case Kind::div:
      print_operand(*n.lhs, 2, out);
      out += n.kind == Kind::mul ? "*" : "/";
      print_operand(*n.rhs, 3, out);
      return;
    case Kind::pow:
      print_operand(*n.lhs, 4, out);
      out += "^";
      print_operand(*n.rhs, 3, out);
      return;
    case Kind::neg:
      out += "-";
      print_operand(*n.lhs, 4, out);
      return;
    case Kind::call:
      out += function_name(n.fn);
      out += "(";
      print(*n.lhs, out);
      out += ")";
      return;
  }
}

inline std::string Expression::str() const {
  std::string out;
  print(*node_, out);
  return out;
}

}  // namespace algsode
