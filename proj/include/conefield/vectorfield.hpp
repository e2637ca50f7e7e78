#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "conefield/expr.hpp"
#include "conefield/types.hpp"

namespace conefield {

/// A vector field f on R^n, immutable once built. Evaluation is pure and may
/// be called concurrently.
class SystemSpec {
 public:
  SystemSpec(std::string name, int dimension, std::vector<ExprAst> components,
             std::map<std::string, double> parameters);

  const std::string& name() const { return name_; }
  int dimension() const { return n_; }
  const std::vector<ExprAst>& components() const { return components_; }
  const std::map<std::string, double>& parameters() const { return parameters_; }

  /// f(x). Throws DomainError naming the offending component.
  Vec eval(const Vec& x) const;
  /// ∂f(x), exact forward-mode differentiation.
  Mat jacobian(const Vec& x) const;
  /// f(x) and ∂f(x) from a single jet pass.
  void eval_with_jacobian(const Vec& x, Vec& value, Mat& jac) const;

  /// Generic evaluation on any scalar type (double, Jet).
  template <typename Scalar, typename State>
  Scalar component(int i, const State& x) const {
    return compiled_[static_cast<std::size_t>(i)].template eval<Scalar>(x, i);
  }

 private:
  std::string name_;
  int n_;
  std::vector<ExprAst> components_;
  std::map<std::string, double> parameters_;
  std::vector<CompiledExpr> compiled_;
};

/// Parses `n=<int>; f1=<expr>; ...; fn=<expr>; [param <name>=<real>;]*`; `#` starts a comment.
SystemSpec parse_system(std::string_view text, std::string name = "user");

/// Renders a spec back into the text format accepted by parse_system.
std::string print_system(const SystemSpec& spec);

Vec eval_field(const SystemSpec& spec, const Vec& x);
Mat eval_jacobian(const SystemSpec& spec, const Vec& x);

/// Built-in systems: "fixedpoint-example", "vanderpol", "linear-diag(a1,...,an)".
SystemSpec builtin(std::string_view name);

}  // namespace conefield
