#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "conefield/error.hpp"
#include "conefield/jet.hpp"

namespace conefield {

enum class UnaryOp : std::uint8_t { Neg, Sin, Cos, Tan, Exp, Log, Sqrt, Abs };
enum class BinaryOp : std::uint8_t { Add, Sub, Mul, Div, Pow };

/// Expression tree for one component of a vector field.
struct ExprAst {
  enum class Kind : std::uint8_t { Constant, Variable, Parameter, Unary, Binary };

  Kind kind = Kind::Constant;
  double constant = 0.0;
  int variable = 0;  // 0-based
  std::string parameter;
  UnaryOp unary = UnaryOp::Neg;
  BinaryOp binary = BinaryOp::Add;
  std::vector<ExprAst> children;
  std::size_t position = 0;  // source offset, for diagnostics

  static ExprAst make_constant(double v);
  static ExprAst make_variable(int index);
  static ExprAst make_parameter(std::string name);
  static ExprAst make_unary(UnaryOp op, ExprAst arg);
  static ExprAst make_binary(BinaryOp op, ExprAst lhs, ExprAst rhs);
};

const char* to_string(UnaryOp op);

/// Parses a single expression. Identifiers `x<k>` become variables (k is
/// 1-based in text); any other identifier becomes a parameter reference that
/// is resolved later.
ExprAst parse_expression(std::string_view text, std::size_t base_offset = 0);

/// Fully parenthesised, round-trippable rendering (17 significant digits).
std::string print_expression(const ExprAst& ast);

/// Stack-machine form of an expression with parameters folded to constants.
class CompiledExpr {
 public:
  CompiledExpr() = default;
  /// Throws ParseError(UnknownIdentifier) for out-of-range variables or
  /// parameters missing from the table.
  CompiledExpr(const ExprAst& ast, int dimension, const std::map<std::string, double>& params);

  /// Evaluates on any scalar supporting the arithmetic and the elementary
  /// functions (double, Jet). Throws DomainError tagged with `component`.
  template <typename Scalar, typename State>
  Scalar eval(const State& x, int component) const;

  std::size_t size() const { return code_.size(); }

 private:
  enum class Op : std::uint8_t {
    Const, Var, Neg, Sin, Cos, Tan, Exp, Log, Sqrt, Abs, Add, Sub, Mul, Div, Pow
  };
  struct Instr {
    Op op;
    int index;
    double value;
  };

  void emit(const ExprAst& ast, int dimension, const std::map<std::string, double>& params,
            int& depth);

  std::vector<Instr> code_;
  int max_depth_ = 0;
  int dimension_ = 0;
};

namespace detail {

template <typename Scalar>
Scalar make_constant(double v, int n) {
  if constexpr (std::is_same_v<Scalar, Jet>) {
    return Jet::constant(v, n);
  } else {
    (void)n;
    return Scalar(v);
  }
}

template <typename Scalar, typename State>
Scalar load(const State& x, int i) {
  if constexpr (std::is_same_v<Scalar, Jet>) {
    return x[i];
  } else {
    return Scalar(x[i]);
  }
}

[[noreturn]] void throw_domain(int component, const char* what);

inline bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

}  // namespace detail

template <typename Scalar, typename State>
Scalar CompiledExpr::eval(const State& x, int component) const {
  using std::abs;
  using std::cos;
  using std::exp;
  using std::log;
  using std::pow;
  using std::sin;
  using std::sqrt;
  using std::tan;

  constexpr int kInline = 32;
  std::array<Scalar, kInline> inline_stack;
  std::vector<Scalar> heap_stack;
  Scalar* stack = inline_stack.data();
  if (max_depth_ > kInline) {
    heap_stack.resize(static_cast<std::size_t>(max_depth_));
    stack = heap_stack.data();
  }
  int top = 0;
  for (const Instr& ins : code_) {
    switch (ins.op) {
      case Op::Const:
        stack[top++] = detail::make_constant<Scalar>(ins.value, dimension_);
        break;
      case Op::Var:
        stack[top++] = detail::load<Scalar>(x, ins.index);
        break;
      case Op::Neg:
        stack[top - 1] = -stack[top - 1];
        break;
      case Op::Sin:
        stack[top - 1] = sin(stack[top - 1]);
        break;
      case Op::Cos:
        stack[top - 1] = cos(stack[top - 1]);
        break;
      case Op::Tan:
        stack[top - 1] = tan(stack[top - 1]);
        break;
      case Op::Exp:
        stack[top - 1] = exp(stack[top - 1]);
        break;
      case Op::Log:
        if (!(value_of(stack[top - 1]) > 0.0)) detail::throw_domain(component, "log of non-positive value");
        stack[top - 1] = log(stack[top - 1]);
        break;
      case Op::Sqrt:
        if (value_of(stack[top - 1]) < 0.0) detail::throw_domain(component, "sqrt of negative value");
        stack[top - 1] = sqrt(stack[top - 1]);
        break;
      case Op::Abs:
        stack[top - 1] = abs(stack[top - 1]);
        break;
      case Op::Add:
        --top;
        stack[top - 1] = stack[top - 1] + stack[top];
        break;
      case Op::Sub:
        --top;
        stack[top - 1] = stack[top - 1] - stack[top];
        break;
      case Op::Mul:
        --top;
        stack[top - 1] = stack[top - 1] * stack[top];
        break;
      case Op::Div:
        --top;
        if (value_of(stack[top]) == 0.0) detail::throw_domain(component, "division by zero");
        stack[top - 1] = stack[top - 1] / stack[top];
        break;
      case Op::Pow: {
        --top;
        const double base = value_of(stack[top - 1]);
        const double expo = value_of(stack[top]);
        if (base < 0.0 && !detail::is_integer(expo))
          detail::throw_domain(component, "negative base with non-integer exponent");
        if (base == 0.0 && expo < 0.0) detail::throw_domain(component, "zero base with negative exponent");
        stack[top - 1] = pow(stack[top - 1], stack[top]);
        break;
      }
    }
  }
  if (!std::isfinite(value_of(stack[0]))) detail::throw_domain(component, "non-finite value");
  return stack[0];
}

}  // namespace conefield
