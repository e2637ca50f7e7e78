#include "conefield/expr.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>

namespace conefield {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Syntax: return "syntax error";
    case ErrorKind::UnknownIdentifier: return "unknown identifier";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::UnknownBuiltin: return "unknown builtin";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::MaxSteps: return "max steps exceeded";
    case ErrorKind::NoConvergence: return "no convergence";
    case ErrorKind::IllConditioned: return "ill-conditioned";
    case ErrorKind::NotOscillating: return "not oscillating";
    case ErrorKind::Refusal: return "refusal";
    case ErrorKind::AngleUndefined: return "angle undefined";
    case ErrorKind::NotInjective: return "not injective";
    case ErrorKind::NoIntersection: return "no intersection";
    case ErrorKind::NullSpace: return "null space";
    case ErrorKind::Unresolved: return "unresolved";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

const char* to_string(UnaryOp op) {
  switch (op) {
    case UnaryOp::Neg: return "-";
    case UnaryOp::Sin: return "sin";
    case UnaryOp::Cos: return "cos";
    case UnaryOp::Tan: return "tan";
    case UnaryOp::Exp: return "exp";
    case UnaryOp::Log: return "log";
    case UnaryOp::Sqrt: return "sqrt";
    case UnaryOp::Abs: return "abs";
  }
  return "?";
}

ExprAst ExprAst::make_constant(double v) {
  ExprAst e;
  e.kind = Kind::Constant;
  e.constant = v;
  return e;
}

ExprAst ExprAst::make_variable(int index) {
  ExprAst e;
  e.kind = Kind::Variable;
  e.variable = index;
  return e;
}

ExprAst ExprAst::make_parameter(std::string name) {
  ExprAst e;
  e.kind = Kind::Parameter;
  e.parameter = std::move(name);
  return e;
}

ExprAst ExprAst::make_unary(UnaryOp op, ExprAst arg) {
  ExprAst e;
  e.kind = Kind::Unary;
  e.unary = op;
  e.position = arg.position;
  e.children.push_back(std::move(arg));
  return e;
}

ExprAst ExprAst::make_binary(BinaryOp op, ExprAst lhs, ExprAst rhs) {
  ExprAst e;
  e.kind = Kind::Binary;
  e.binary = op;
  e.position = lhs.position;
  e.children.push_back(std::move(lhs));
  e.children.push_back(std::move(rhs));
  return e;
}

namespace {

// Recursive-descent parser:
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?
//   primary := number | identifier | identifier '(' expr ')' | '(' expr ')'
class Parser {
 public:
  Parser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  ExprAst parse() {
    ExprAst e = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(ErrorKind::Syntax, base_ + pos_, what);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  ExprAst expr() {
    ExprAst lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = ExprAst::make_binary(BinaryOp::Add, std::move(lhs), term());
      } else if (accept('-')) {
        lhs = ExprAst::make_binary(BinaryOp::Sub, std::move(lhs), term());
      } else {
        return lhs;
      }
    }
  }

  ExprAst term() {
    ExprAst lhs = unary();
    for (;;) {
      if (accept('*')) {
        lhs = ExprAst::make_binary(BinaryOp::Mul, std::move(lhs), unary());
      } else if (accept('/')) {
        lhs = ExprAst::make_binary(BinaryOp::Div, std::move(lhs), unary());
      } else {
        return lhs;
      }
    }
  }

  ExprAst unary() {
    skip_ws();
    const std::size_t at = pos_;
    if (accept('-')) {
      ExprAst e = ExprAst::make_unary(UnaryOp::Neg, unary());
      e.position = base_ + at;
      return e;
    }
    if (accept('+')) return unary();
    return power();
  }

  ExprAst power() {
    ExprAst base = primary();
    if (accept('^')) return ExprAst::make_binary(BinaryOp::Pow, std::move(base), unary());
    return base;
  }

  ExprAst primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of expression");
    const std::size_t at = pos_;
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      ExprAst e = expr();
      if (!accept(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::string name = identifier();
      if (accept('(')) {
        ExprAst arg = expr();
        if (!accept(')')) fail("expected ')' after function argument");
        static const std::pair<const char*, UnaryOp> kFuncs[] = {
            {"sin", UnaryOp::Sin}, {"cos", UnaryOp::Cos},   {"tan", UnaryOp::Tan},
            {"exp", UnaryOp::Exp}, {"log", UnaryOp::Log},   {"sqrt", UnaryOp::Sqrt},
            {"abs", UnaryOp::Abs}};
        for (const auto& [fname, op] : kFuncs) {
          if (name == fname) {
            ExprAst e = ExprAst::make_unary(op, std::move(arg));
            e.position = base_ + at;
            return e;
          }
        }
        throw ParseError(ErrorKind::UnknownIdentifier, base_ + at, "unknown function '" + name + "'");
      }
      ExprAst e;
      if (name.size() > 1 && name[0] == 'x' &&
          name.find_first_not_of("0123456789", 1) == std::string::npos) {
        const int k = std::atoi(name.c_str() + 1);
        if (k < 1) throw ParseError(ErrorKind::UnknownIdentifier, base_ + at, "unknown identifier '" + name + "'");
        e = ExprAst::make_variable(k - 1);
      } else {
        e = ExprAst::make_parameter(name);
      }
      e.position = base_ + at;
      return e;
    }
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  std::string identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  ExprAst number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t look = pos_ + 1;
      if (look < text_.size() && (text_[look] == '+' || text_[look] == '-')) ++look;
      if (look < text_.size() && std::isdigit(static_cast<unsigned char>(text_[look]))) {
        pos_ = look;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    const std::string literal(text_.substr(start, pos_ - start));
    char* end = nullptr;
    const double v = std::strtod(literal.c_str(), &end);
    if (end != literal.c_str() + literal.size()) {
      throw ParseError(ErrorKind::Syntax, base_ + start, "malformed number '" + literal + "'");
    }
    ExprAst e = ExprAst::make_constant(v);
    e.position = base_ + start;
    return e;
  }

  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ExprAst parse_expression(std::string_view text, std::size_t base_offset) {
  return Parser(text, base_offset).parse();
}

std::string print_expression(const ExprAst& ast) {
  switch (ast.kind) {
    case ExprAst::Kind::Constant: {
      const std::string s = format_real(ast.constant);
      return ast.constant < 0.0 ? "(" + s + ")" : s;
    }
    case ExprAst::Kind::Variable:
      return "x" + std::to_string(ast.variable + 1);
    case ExprAst::Kind::Parameter:
      return ast.parameter;
    case ExprAst::Kind::Unary: {
      const std::string arg = print_expression(ast.children[0]);
      if (ast.unary == UnaryOp::Neg) return "(-" + arg + ")";
      return std::string(to_string(ast.unary)) + "(" + arg + ")";
    }
    case ExprAst::Kind::Binary: {
      static const char kOps[] = {'+', '-', '*', '/', '^'};
      return "(" + print_expression(ast.children[0]) + " " +
             kOps[static_cast<int>(ast.binary)] + " " + print_expression(ast.children[1]) + ")";
    }
  }
  return {};
}

namespace detail {

void throw_domain(int component, const char* what) { throw DomainError(component, what); }

}  // namespace detail

CompiledExpr::CompiledExpr(const ExprAst& ast, int dimension,
                           const std::map<std::string, double>& params)
    : dimension_(dimension) {
  int depth = 0;
  emit(ast, dimension, params, depth);
}

void CompiledExpr::emit(const ExprAst& ast, int dimension,
                        const std::map<std::string, double>& params, int& depth) {
  auto push = [&](Instr ins) {
    code_.push_back(ins);
    ++depth;
    max_depth_ = std::max(max_depth_, depth);
  };
  switch (ast.kind) {
    case ExprAst::Kind::Constant:
      push({Op::Const, 0, ast.constant});
      return;
    case ExprAst::Kind::Variable:
      if (ast.variable < 0 || ast.variable >= dimension) {
        throw ParseError(ErrorKind::UnknownIdentifier, ast.position,
                         "unknown identifier 'x" + std::to_string(ast.variable + 1) +
                             "' (system dimension " + std::to_string(dimension) + ")");
      }
      push({Op::Var, ast.variable, 0.0});
      return;
    case ExprAst::Kind::Parameter: {
      auto it = params.find(ast.parameter);
      if (it == params.end()) {
        throw ParseError(ErrorKind::UnknownIdentifier, ast.position,
                         "unknown identifier '" + ast.parameter + "'");
      }
      push({Op::Const, 0, it->second});
      return;
    }
    case ExprAst::Kind::Unary: {
      emit(ast.children[0], dimension, params, depth);
      static const Op kMap[] = {Op::Neg, Op::Sin, Op::Cos, Op::Tan,
                                Op::Exp, Op::Log, Op::Sqrt, Op::Abs};
      code_.push_back({kMap[static_cast<int>(ast.unary)], 0, 0.0});
      return;
    }
    case ExprAst::Kind::Binary: {
      emit(ast.children[0], dimension, params, depth);
      emit(ast.children[1], dimension, params, depth);
      static const Op kMap[] = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow};
      code_.push_back({kMap[static_cast<int>(ast.binary)], 0, 0.0});
      --depth;
      return;
    }
  }
}

}  // namespace conefield
