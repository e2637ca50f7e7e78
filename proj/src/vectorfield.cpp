#include "conefield/vectorfield.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>

namespace conefield {

SystemSpec::SystemSpec(std::string name, int dimension, std::vector<ExprAst> components,
                       std::map<std::string, double> parameters)
    : name_(std::move(name)),
      n_(dimension),
      components_(std::move(components)),
      parameters_(std::move(parameters)) {
  if (n_ < 1) throw Error(ErrorKind::DimensionMismatch, "system dimension must be positive");
  if (n_ > kMaxDim) {
    throw Error(ErrorKind::DimensionMismatch,
                "system dimension " + std::to_string(n_) + " exceeds supported maximum " +
                    std::to_string(kMaxDim));
  }
  if (static_cast<int>(components_.size()) != n_) {
    throw Error(ErrorKind::DimensionMismatch,
                "dimension mismatch: declared n=" + std::to_string(n_) + " but " +
                    std::to_string(components_.size()) + " components given");
  }
  compiled_.reserve(components_.size());
  for (const ExprAst& c : components_) compiled_.emplace_back(c, n_, parameters_);
}

Vec SystemSpec::eval(const Vec& x) const {
  Vec out(n_);
  for (int i = 0; i < n_; ++i) out[i] = component<double>(i, x);
  return out;
}

void SystemSpec::eval_with_jacobian(const Vec& x, Vec& value, Mat& jac) const {
  std::array<Jet, kMaxDim> seeds;
  for (int i = 0; i < n_; ++i) seeds[i] = Jet::variable(x[i], i, n_);
  value.resize(n_);
  jac.resize(n_, n_);
  for (int i = 0; i < n_; ++i) {
    const Jet r = component<Jet>(i, seeds);
    value[i] = r.value;
    jac.row(i) = r.grad.transpose();
    if (!r.grad.allFinite()) throw DomainError(i, "non-finite derivative");
  }
}

Mat SystemSpec::jacobian(const Vec& x) const {
  Vec v;
  Mat j;
  eval_with_jacobian(x, v, j);
  return j;
}

Vec eval_field(const SystemSpec& spec, const Vec& x) {
  if (x.size() != spec.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "state has length " + std::to_string(x.size()) +
                                                  ", system dimension is " +
                                                  std::to_string(spec.dimension()));
  }
  return spec.eval(x);
}

Mat eval_jacobian(const SystemSpec& spec, const Vec& x) {
  if (x.size() != spec.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "state has length " + std::to_string(x.size()) +
                                                  ", system dimension is " +
                                                  std::to_string(spec.dimension()));
  }
  return spec.jacobian(x);
}

namespace {

std::size_t skip_ws(std::string_view s, std::size_t i) {
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return i;
}

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_real(std::string_view text, std::size_t offset) {
  const std::string t(trim(text));
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw ParseError(ErrorKind::Syntax, offset, "expected a real number, got '" + t + "'");
  }
  return v;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

SystemSpec parse_system(std::string_view raw, std::string name) {
  // `#` comments run to the end of the line; blanked so offsets stay valid.
  std::string blanked(raw);
  for (std::size_t i = 0; i < blanked.size(); ++i) {
    if (blanked[i] != '#') continue;
    for (; i < blanked.size() && blanked[i] != '\n'; ++i) blanked[i] = ' ';
  }
  const std::string_view text = blanked;
  std::optional<int> n;
  std::size_t n_offset = 0;
  std::map<int, std::pair<ExprAst, std::size_t>> comps;
  std::map<std::string, double> params;

  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(';', start);
    if (end == std::string_view::npos) end = text.size();
    const std::size_t stmt_begin = skip_ws(text, start);
    const std::string_view stmt = trim(text.substr(start, end - start));
    if (!stmt.empty()) {
      const std::size_t eq = stmt.find('=');
      if (eq == std::string_view::npos) {
        throw ParseError(ErrorKind::Syntax, stmt_begin, "expected '=' in statement");
      }
      std::string_view lhs = trim(stmt.substr(0, eq));
      const std::string_view rhs = stmt.substr(eq + 1);
      const std::size_t rhs_offset = stmt_begin + eq + 1;
      if (lhs.substr(0, 6) == "param ") {
        const std::string pname(trim(lhs.substr(6)));
        if (pname.empty() || !(std::isalpha(static_cast<unsigned char>(pname[0])) || pname[0] == '_')) {
          throw ParseError(ErrorKind::Syntax, stmt_begin, "invalid parameter name '" + pname + "'");
        }
        for (char c : pname) {
          if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) {
            throw ParseError(ErrorKind::Syntax, stmt_begin, "invalid parameter name '" + pname + "'");
          }
        }
        params[pname] = parse_real(rhs, rhs_offset);
      } else if (lhs == "n") {
        const double v = parse_real(rhs, rhs_offset);
        if (v < 1 || std::floor(v) != v) {
          throw ParseError(ErrorKind::Syntax, rhs_offset, "n must be a positive integer");
        }
        n = static_cast<int>(v);
        n_offset = stmt_begin;
      } else if (lhs.size() > 1 && lhs[0] == 'f' &&
                 lhs.find_first_not_of("0123456789", 1) == std::string_view::npos) {
        const int k = std::atoi(std::string(lhs.substr(1)).c_str());
        if (k < 1) throw ParseError(ErrorKind::Syntax, stmt_begin, "component index must start at 1");
        if (comps.count(k)) {
          throw ParseError(ErrorKind::Syntax, stmt_begin, "component f" + std::to_string(k) + " defined twice");
        }
        comps.emplace(k, std::make_pair(parse_expression(rhs, rhs_offset), stmt_begin));
      } else {
        throw ParseError(ErrorKind::Syntax, stmt_begin, "unrecognised statement '" + std::string(lhs) + "'");
      }
    }
    if (end == text.size()) break;
    start = end + 1;
  }

  if (!n) throw ParseError(ErrorKind::Syntax, 0, "missing dimension statement 'n=<int>'");

  // Identifier resolution comes before the count check so that an out-of-range
  // variable is reported as such.
  for (const auto& [k, entry] : comps) {
    (void)k;
    CompiledExpr probe(entry.first, *n, params);
  }

  std::vector<ExprAst> components;
  for (int k = 1; k <= *n; ++k) {
    auto it = comps.find(k);
    if (it == comps.end()) {
      throw ParseError(ErrorKind::DimensionMismatch, n_offset,
                       "dimension mismatch: n=" + std::to_string(*n) + " but f" +
                           std::to_string(k) + " is missing");
    }
    components.push_back(std::move(it->second.first));
  }
  if (static_cast<int>(comps.size()) != *n) {
    throw ParseError(ErrorKind::DimensionMismatch, comps.rbegin()->second.second,
                     "dimension mismatch: n=" + std::to_string(*n) + " but " +
                         std::to_string(comps.size()) + " components defined");
  }
  return SystemSpec(std::move(name), *n, std::move(components), std::move(params));
}

std::string print_system(const SystemSpec& spec) {
  std::string out = "n=" + std::to_string(spec.dimension()) + ";";
  for (int i = 0; i < spec.dimension(); ++i) {
    out += " f" + std::to_string(i + 1) + "=" +
           print_expression(spec.components()[static_cast<std::size_t>(i)]) + ";";
  }
  for (const auto& [k, v] : spec.parameters()) out += " param " + k + "=" + format_real(v) + ";";
  return out;
}

SystemSpec builtin(std::string_view name) {
  const std::string_view key = trim(name);
  if (key == "fixedpoint-example") {
    return parse_system("n=2; f1=-sin(x1)+cos(x2)-1; f2=-cos(x1)-1.5*sin(x2)+1", std::string(key));
  }
  if (key == "vanderpol") {
    return parse_system("n=2; f1=x2; f2=(1-x1^2)*x2-x1", std::string(key));
  }
  constexpr std::string_view kDiag = "linear-diag(";
  if (key.substr(0, kDiag.size()) == kDiag && key.back() == ')') {
    const std::string_view args = key.substr(kDiag.size(), key.size() - kDiag.size() - 1);
    std::vector<double> coeffs;
    std::size_t s = 0;
    while (s <= args.size()) {
      std::size_t e = args.find(',', s);
      if (e == std::string_view::npos) e = args.size();
      try {
        coeffs.push_back(parse_real(args.substr(s, e - s), kDiag.size() + s));
      } catch (const ParseError&) {
        throw Error(ErrorKind::UnknownBuiltin, "malformed builtin '" + std::string(key) + "'");
      }
      if (e == args.size()) break;
      s = e + 1;
    }
    std::string text = "n=" + std::to_string(coeffs.size()) + ";";
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      text += " f" + std::to_string(i + 1) + "=" + format_real(coeffs[i]) + "*x" + std::to_string(i + 1) + ";";
    }
    return parse_system(text, std::string(key));
  }
  throw Error(ErrorKind::UnknownBuiltin, "unknown builtin system '" + std::string(key) + "'");
}

}  // namespace conefield
