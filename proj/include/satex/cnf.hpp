#pragma once

// DIMACS CNF reading and writing, assignment evaluation, the competition
// solver-output grammar, status normalization and a small brute-force /
// DPLL oracle used to establish ground truth in tests.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "satex/gzip.hpp"

namespace satex {

/// Outcome classes shared by runs, claims and normalized results.
enum class Status { Sat, Unsat, Unknown, Timeout, MemOut, CrashOrError };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Sat: return "SAT";
    case Status::Unsat: return "UNSAT";
    case Status::Unknown: return "UNKNOWN";
    case Status::Timeout: return "TIMEOUT";
    case Status::MemOut: return "MEMOUT";
    case Status::CrashOrError: return "ERROR";
  }
  return "ERROR";
}

inline std::optional<Status> status_from_string(std::string_view s) {
  for (Status st : {Status::Sat, Status::Unsat, Status::Unknown, Status::Timeout, Status::MemOut,
                    Status::CrashOrError})
    if (to_string(st) == s) return st;
  return std::nullopt;
}

// Normalized exit codes. This is the only place the numbers live.
inline constexpr int kExitSat = 10;
inline constexpr int kExitUnsat = 20;
inline constexpr int kExitUnknown = 0;
inline constexpr int kExitOther = 1;

constexpr int normalized_exit(Status s) {
  switch (s) {
    case Status::Sat: return kExitSat;
    case Status::Unsat: return kExitUnsat;
    case Status::Unknown: return kExitUnknown;
    default: return kExitOther;
  }
}

struct NormalizedStatus {
  Status status = Status::Unknown;
  int exit_code = kExitUnknown;

  friend bool operator==(const NormalizedStatus&, const NormalizedStatus&) = default;
};

namespace cnf {

using Literal = std::int32_t;
using Clause = std::vector<Literal>;

inline std::uint32_t var_of(Literal lit) { return static_cast<std::uint32_t>(lit < 0 ? -lit : lit); }

struct Formula {
  std::uint32_t num_vars = 0;
  std::vector<Clause> clauses;

  friend bool operator==(const Formula&, const Formula&) = default;
};

// ---------------------------------------------------------------------------
// DIMACS

enum class DimacsErrorKind {
  NoProblemLine,
  MalformedHeader,
  MalformedToken,
  LiteralOutOfRange,
  UnterminatedClause,
  HeaderMismatch,
  GzipCorrupt,
};

inline std::string_view to_string(DimacsErrorKind k) {
  switch (k) {
    case DimacsErrorKind::NoProblemLine: return "NoProblemLine";
    case DimacsErrorKind::MalformedHeader: return "MalformedHeader";
    case DimacsErrorKind::MalformedToken: return "MalformedToken";
    case DimacsErrorKind::LiteralOutOfRange: return "LiteralOutOfRange";
    case DimacsErrorKind::UnterminatedClause: return "UnterminatedClause";
    case DimacsErrorKind::HeaderMismatch: return "HeaderMismatch";
    case DimacsErrorKind::GzipCorrupt: return "GzipCorrupt";
  }
  return "?";
}

class DimacsError : public std::runtime_error {
 public:
  DimacsError(DimacsErrorKind kind, std::size_t line, const std::string& what)
      : std::runtime_error("dimacs:" + std::to_string(line) + ": " + std::string(to_string(kind)) +
                           ": " + what),
        kind_(kind),
        line_(line) {}

  DimacsErrorKind kind() const { return kind_; }
  /// 1-based line number; 0 when not tied to a line.
  std::size_t line() const { return line_; }

 private:
  DimacsErrorKind kind_;
  std::size_t line_;
};

struct DimacsOptions {
  /// Turns a clause-count mismatch with the header into an error.
  bool strict = false;
};

struct DimacsWarning {
  DimacsErrorKind kind;
  std::size_t line;
  std::string message;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\f' || s.front() == '\v'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\f' || s.back() == '\v'))
    s.remove_suffix(1);
  return s;
}

/// Calls fn(token) for each whitespace separated token.
template <typename Fn>
void for_each_token(std::string_view line, Fn&& fn) {
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::string_view(" \t\r\f\v").find(line[i]) != std::string_view::npos) ++i;
    std::size_t j = i;
    while (j < line.size() && std::string_view(" \t\r\f\v").find(line[j]) == std::string_view::npos) ++j;
    if (j > i) fn(line.substr(i, j - i));
    i = j;
  }
}

template <typename Int>
std::optional<Int> parse_int(std::string_view tok) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  Int v{};
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses plain or gzip-compressed DIMACS CNF; compression is detected from
/// the stream's magic bytes. A `%` line ends the formula (SATLIB files).
inline Formula parse_dimacs(std::string_view bytes, const DimacsOptions& opts = {},
                            std::vector<DimacsWarning>* warnings = nullptr) {
  std::string inflated;
  if (has_gzip_magic(bytes)) {
    try {
      inflated = gunzip(bytes);
    } catch (const GzipError& e) {
      throw DimacsError(DimacsErrorKind::GzipCorrupt, 0, e.what());
    }
    bytes = inflated;
  }

  Formula f;
  bool have_header = false;
  std::uint64_t declared = 0;
  Clause current;
  std::size_t lineno = 0;
  std::size_t clause_start_line = 0;

  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string_view::npos) eol = bytes.size();
    std::string_view line = detail::trim(bytes.substr(pos, eol - pos));
    pos = eol + 1;
    ++lineno;

    if (line.empty() || line.front() == 'c') continue;
    if (line.front() == '%') break;
    if (line.front() == 'p') {
      if (have_header) throw DimacsError(DimacsErrorKind::MalformedHeader, lineno, "duplicate problem line");
      std::vector<std::string_view> toks;
      detail::for_each_token(line, [&](std::string_view t) { toks.push_back(t); });
      std::optional<std::int64_t> v, c;
      if (toks.size() == 4 && toks[0] == "p" && toks[1] == "cnf") {
        v = detail::parse_int<std::int64_t>(toks[2]);
        c = detail::parse_int<std::int64_t>(toks[3]);
      }
      if (!v || !c || *v < 0 || *c < 0 || *v > INT32_MAX)
        throw DimacsError(DimacsErrorKind::MalformedHeader, lineno, "expected 'p cnf <vars> <clauses>'");
      f.num_vars = static_cast<std::uint32_t>(*v);
      declared = static_cast<std::uint64_t>(*c);
      have_header = true;
      continue;
    }
    if (!have_header) throw DimacsError(DimacsErrorKind::NoProblemLine, lineno, "clause data before 'p cnf' line");

    detail::for_each_token(line, [&](std::string_view tok) {
      auto lit = detail::parse_int<std::int64_t>(tok);
      if (!lit) throw DimacsError(DimacsErrorKind::MalformedToken, lineno, "not an integer: '" + std::string(tok) + "'");
      if (*lit == 0) {
        f.clauses.push_back(std::move(current));
        current.clear();
        return;
      }
      if (current.empty()) clause_start_line = lineno;
      std::int64_t mag = *lit < 0 ? -*lit : *lit;
      if (mag > static_cast<std::int64_t>(f.num_vars))
        throw DimacsError(DimacsErrorKind::LiteralOutOfRange, lineno,
                          "literal " + std::string(tok) + " exceeds declared " + std::to_string(f.num_vars) + " variables");
      current.push_back(static_cast<Literal>(*lit));
    });
  }

  if (!have_header) throw DimacsError(DimacsErrorKind::NoProblemLine, lineno, "missing 'p cnf' line");
  if (!current.empty())
    throw DimacsError(DimacsErrorKind::UnterminatedClause, clause_start_line, "last clause lacks terminating 0");
  if (f.clauses.size() != declared) {
    std::string msg = "header declares " + std::to_string(declared) + " clauses, found " + std::to_string(f.clauses.size());
    if (opts.strict) throw DimacsError(DimacsErrorKind::HeaderMismatch, 0, msg);
    if (warnings) warnings->push_back({DimacsErrorKind::HeaderMismatch, 0, std::move(msg)});
  }
  return f;
}

inline Formula parse_dimacs_file(const std::filesystem::path& path, const DimacsOptions& opts = {},
                                 std::vector<DimacsWarning>* warnings = nullptr) {
  return parse_dimacs(read_file(path), opts, warnings);
}

inline std::string serialize(const Formula& f) {
  std::string out = "p cnf " + std::to_string(f.num_vars) + " " + std::to_string(f.clauses.size()) + "\n";
  for (const Clause& c : f.clauses) {
    for (Literal lit : c) {
      out += std::to_string(lit);
      out += ' ';
    }
    out += "0\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assignments

class Assignment {
 public:
  Assignment() = default;

  void set(std::uint32_t var, bool value) { values_[var] = value; }
  /// Sets the variable of `lit` so that `lit` becomes true.
  void assign(Literal lit) { values_[var_of(lit)] = lit > 0; }

  std::optional<bool> value(std::uint32_t var) const {
    auto it = values_.find(var);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<bool> literal_value(Literal lit) const {
    auto v = value(var_of(lit));
    if (!v) return std::nullopt;
    return lit > 0 ? *v : !*v;
  }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  const std::map<std::uint32_t, bool>& values() const { return values_; }

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::map<std::uint32_t, bool> values_;
};

enum class Evaluation { Satisfied, Falsified, Undetermined };

inline std::string_view to_string(Evaluation e) {
  switch (e) {
    case Evaluation::Satisfied: return "satisfied";
    case Evaluation::Falsified: return "falsified";
    case Evaluation::Undetermined: return "undetermined";
  }
  return "?";
}

inline Evaluation evaluate(const Formula& f, const Assignment& a) {
  bool all_satisfied = true;
  for (const Clause& c : f.clauses) {
    bool sat = false, open = false;
    for (Literal lit : c) {
      auto v = a.literal_value(lit);
      if (!v) open = true;
      else if (*v) { sat = true; break; }
    }
    if (sat) continue;
    if (!open) return Evaluation::Falsified;
    all_satisfied = false;
  }
  return all_satisfied ? Evaluation::Satisfied : Evaluation::Undetermined;
}

/// Model check for solver claims: unassigned variables count as false.
inline Evaluation verify_model(const Formula& f, const Assignment& a) {
  for (const Clause& c : f.clauses) {
    bool sat = std::any_of(c.begin(), c.end(), [&](Literal lit) { return a.literal_value(lit).value_or(lit < 0); });
    if (!sat) return Evaluation::Falsified;
  }
  return Evaluation::Satisfied;
}

// ---------------------------------------------------------------------------
// Solver output (`c` / `s` / `v` lines)

class OutputError : public std::runtime_error {
 public:
  OutputError(std::size_t line, const std::string& what)
      : std::runtime_error("solver output:" + std::to_string(line) + ": MalformedValueLine: " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct SolverClaim {
  Status status = Status::Unknown;
  std::optional<Assignment> model;
};

inline SolverClaim parse_solver_output(std::istream& in) {
  SolverClaim claim;
  bool model_closed = false;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.size() >= 2 && line[0] == 's' && (line[1] == ' ' || line[1] == '\t')) {
      std::string_view word = detail::trim(line.substr(2));
      claim.status = word == "SATISFIABLE" ? Status::Sat : word == "UNSATISFIABLE" ? Status::Unsat : Status::Unknown;
    } else if (line.size() >= 1 && line[0] == 'v' && (line.size() == 1 || line[1] == ' ' || line[1] == '\t')) {
      if (!claim.model) claim.model.emplace();
      detail::for_each_token(line.substr(1), [&](std::string_view tok) {
        auto lit = detail::parse_int<std::int64_t>(tok);
        if (!lit || *lit > INT32_MAX || *lit < -INT32_MAX)
          throw OutputError(lineno, "non-integer token '" + std::string(tok) + "'");
        if (model_closed) return;
        if (*lit == 0) {
          model_closed = true;
          return;
        }
        auto prior = claim.model->literal_value(static_cast<Literal>(*lit));
        if (prior && !*prior) throw OutputError(lineno, "variable " + std::to_string(var_of(static_cast<Literal>(*lit))) + " assigned both ways");
        claim.model->assign(static_cast<Literal>(*lit));
      });
    }
  }
  return claim;
}

inline SolverClaim parse_solver_output(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_solver_output(in);
}

// ---------------------------------------------------------------------------
// Normalization

/// Resolves the final status of a run. Resource-limit outcomes and abnormal
/// terminations recorded by the runtime win over whatever the solver printed;
/// a Sat claim whose model does not check is downgraded to CrashOrError.
inline NormalizedStatus normalize_outcome(Status raw, Status claim, std::optional<Evaluation> verification = std::nullopt) {
  Status s = claim;
  if (raw == Status::Timeout || raw == Status::MemOut || raw == Status::CrashOrError) s = raw;
  else if (claim == Status::Sat && verification && *verification != Evaluation::Satisfied) s = Status::CrashOrError;
  else if (claim != Status::Sat && claim != Status::Unsat) s = Status::Unknown;
  return {s, normalized_exit(s)};
}

// ---------------------------------------------------------------------------
// Oracle

enum class OracleMethod { Enumerate, Dpll };

inline constexpr std::uint32_t kEnumerateMaxVars = 24;

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OracleResult {
  Status status = Status::Unknown;  // Sat or Unsat
  Assignment model;                 // meaningful when Sat
};

namespace detail {

inline bool enumerate_solve(const Formula& f, Assignment& model) {
  const std::uint64_t n = f.num_vars;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    bool ok = true;
    for (const Clause& c : f.clauses) {
      bool sat = false;
      for (Literal lit : c) {
        bool bit = (mask >> (var_of(lit) - 1)) & 1u;
        if (bit == (lit > 0)) { sat = true; break; }
      }
      if (!sat) { ok = false; break; }
    }
    if (ok) {
      for (std::uint32_t v = 1; v <= f.num_vars; ++v) model.set(v, (mask >> (v - 1)) & 1u);
      return true;
    }
  }
  return false;
}

// values: 0 unassigned, +1 true, -1 false
class Dpll {
 public:
  explicit Dpll(const Formula& f) : f_(f), values_(f.num_vars + 1, 0) {}

  bool solve() { return search(); }

  Assignment model() const {
    Assignment a;
    for (std::uint32_t v = 1; v < values_.size(); ++v)
      if (values_[v] != 0) a.set(v, values_[v] > 0);
    return a;
  }

 private:
  int lit_value(Literal lit) const {
    int v = values_[var_of(lit)];
    return lit > 0 ? v : -v;
  }

  // Returns false on conflict. Appends assigned variables to trail.
  bool propagate(std::vector<std::uint32_t>& trail) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (const Clause& c : f_.clauses) {
        Literal unit = 0;
        int open = 0;
        bool sat = false;
        for (Literal lit : c) {
          int v = lit_value(lit);
          if (v > 0) { sat = true; break; }
          if (v == 0) { ++open; unit = lit; }
        }
        if (sat) continue;
        if (open == 0) return false;
        if (open == 1) {
          values_[var_of(unit)] = unit > 0 ? 1 : -1;
          trail.push_back(var_of(unit));
          changed = true;
        }
      }
    }
    return true;
  }

  Literal pick() const {
    for (const Clause& c : f_.clauses) {
      bool sat = false;
      Literal first_open = 0;
      for (Literal lit : c) {
        int v = lit_value(lit);
        if (v > 0) { sat = true; break; }
        if (v == 0 && first_open == 0) first_open = lit;
      }
      if (!sat && first_open != 0) return first_open;
    }
    return 0;
  }

  bool search() {
    std::vector<std::uint32_t> trail;
    if (!propagate(trail)) {
      undo(trail);
      return false;
    }
    Literal decision = pick();
    if (decision == 0) return true;  // every clause satisfied
    for (Literal choice : {decision, -decision}) {
      values_[var_of(choice)] = choice > 0 ? 1 : -1;
      if (search()) return true;
      values_[var_of(choice)] = 0;
    }
    undo(trail);
    return false;
  }

  void undo(const std::vector<std::uint32_t>& trail) {
    for (std::uint32_t v : trail) values_[v] = 0;
  }

  const Formula& f_;
  std::vector<int> values_;
};

}  // namespace detail

/// Ground-truth solver for small formulas. Enumeration refuses formulas with
/// more than kEnumerateMaxVars variables.
inline OracleResult solve_oracle(const Formula& f, OracleMethod method = OracleMethod::Dpll) {
  OracleResult r;
  if (method == OracleMethod::Enumerate) {
    if (f.num_vars > kEnumerateMaxVars)
      throw OracleError("TooLarge: enumeration limited to " + std::to_string(kEnumerateMaxVars) + " variables, formula has " +
                        std::to_string(f.num_vars));
    r.status = detail::enumerate_solve(f, r.model) ? Status::Sat : Status::Unsat;
    return r;
  }
  detail::Dpll dpll(f);
  if (dpll.solve()) {
    r.status = Status::Sat;
    r.model = dpll.model();
  } else {
    r.status = Status::Unsat;
  }
  return r;
}

}  // namespace cnf
}  // namespace satex
