#pragma once

// Forward checking of DRUP certificates: every added clause must follow from
// the current clause database by reverse unit propagation; `d` lines remove
// one copy of a clause. Checking succeeds once the empty clause is added.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "satex/cnf.hpp"

namespace satex::proof {

using cnf::Clause;
using cnf::Literal;

struct ProofStep {
  enum class Kind { Add, Delete };
  Kind kind = Kind::Add;
  Clause clause;

  friend bool operator==(const ProofStep&, const ProofStep&) = default;
};

struct ProofLog {
  std::vector<ProofStep> steps;

  friend bool operator==(const ProofLog&, const ProofLog&) = default;
};

class ProofParseError : public std::runtime_error {
 public:
  ProofParseError(std::size_t line, std::string content, const std::string& why)
      : std::runtime_error("proof:" + std::to_string(line) + ": MalformedLine: " + why + ": '" + content + "'"),
        line_(line),
        content_(std::move(content)) {}

  std::size_t line() const { return line_; }
  const std::string& content() const { return content_; }

 private:
  std::size_t line_;
  std::string content_;
};

/// Reads the textual DRUP format: one clause per line, literals terminated by
/// 0, an optional leading `d` for deletions. Blank and `c` lines are skipped.
inline ProofLog parse_drup(std::string_view text) {
  ProofLog log;
  std::size_t pos = 0, lineno = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = cnf::detail::trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++lineno;
    if (line.empty() || line.front() == 'c') continue;

    std::vector<std::string_view> toks;
    cnf::detail::for_each_token(line, [&](std::string_view t) { toks.push_back(t); });
    ProofStep step;
    std::size_t first = 0;
    if (toks[0] == "d") {
      step.kind = ProofStep::Kind::Delete;
      first = 1;
    }
    if (toks.size() == first || toks.back() != "0")
      throw ProofParseError(lineno, std::string(line), "clause must end with 0");
    for (std::size_t i = first; i + 1 < toks.size(); ++i) {
      auto lit = cnf::detail::parse_int<std::int64_t>(toks[i]);
      if (!lit) throw ProofParseError(lineno, std::string(line), "not an integer: '" + std::string(toks[i]) + "'");
      if (*lit == 0) throw ProofParseError(lineno, std::string(line), "0 inside clause");
      if (*lit > INT32_MAX || *lit < -INT32_MAX) throw ProofParseError(lineno, std::string(line), "literal out of range");
      step.clause.push_back(static_cast<Literal>(*lit));
    }
    log.steps.push_back(std::move(step));
  }
  return log;
}

/// Reference RUP test: assume the negation of every literal of `clause`,
/// propagate units over `database` to a fixpoint by repeated scanning, and
/// report whether some clause ends up fully falsified.
inline bool check_rup(std::span<const Clause> database, const Clause& clause) {
  std::map<std::uint32_t, bool> value;  // var -> truth value
  auto lit_state = [&](Literal lit) -> int {
    auto it = value.find(cnf::var_of(lit));
    if (it == value.end()) return 0;
    return (it->second == (lit > 0)) ? 1 : -1;
  };
  for (Literal lit : clause) {
    if (lit_state(lit) == 1) return true;  // clause contains x and -x
    value[cnf::var_of(lit)] = lit < 0;
  }
  for (bool changed = true; changed;) {
    changed = false;
    for (const Clause& c : database) {
      int open = 0;
      Literal unit = 0;
      bool sat = false;
      for (Literal lit : c) {
        int s = lit_state(lit);
        if (s > 0) { sat = true; break; }
        if (s == 0 && open == 0) { open = 1; unit = lit; }
        else if (s == 0 && lit != unit) open = 2;
      }
      if (sat) continue;
      if (open == 0) return true;
      if (open == 1) {
        value[cnf::var_of(unit)] = unit > 0;
        changed = true;
      }
    }
  }
  return false;
}

/// Incremental clause database with two-watched-literal propagation. Every
/// RUP query starts from an empty assignment; watches persist across queries.
class RupDatabase {
 public:
  using ClauseId = std::uint32_t;

  void add(const Clause& raw) {
    Clause c = canonical(raw);
    ensure_var(max_var(c));
    ClauseId id = static_cast<ClauseId>(clauses_.size());
    bool taut = is_tautology(c);
    clauses_.push_back(c);
    alive_.push_back(true);
    by_key_[c].push_back(id);
    if (taut) return;
    if (c.empty()) ++alive_empty_;
    else if (c.size() == 1) units_.push_back(id);
    else {
      watches_[code(c[0])].push_back(id);
      watches_[code(c[1])].push_back(id);
    }
  }

  /// Removes one copy of a clause equal to `raw` as a literal set.
  bool remove(const Clause& raw) {
    auto it = by_key_.find(canonical(raw));
    if (it == by_key_.end() || it->second.empty()) return false;
    ClauseId id = it->second.back();
    it->second.pop_back();
    alive_[id] = false;
    if (clauses_[id].empty()) --alive_empty_;
    return true;
  }

  std::size_t size() const {
    return static_cast<std::size_t>(std::count(alive_.begin(), alive_.end(), true));
  }

  bool has_rup(const Clause& clause) {
    if (alive_empty_ > 0) return true;
    ensure_var(max_var(clause));
    bool conflict = false;
    for (Literal lit : clause) {
      if (!assume(-lit)) { conflict = true; break; }
    }
    if (!conflict) {
      for (ClauseId id : units_) {
        if (!alive_[id]) continue;
        if (!assume(clauses_[id][0])) { conflict = true; break; }
      }
    }
    if (!conflict) conflict = propagate();
    reset();
    return conflict;
  }

  /// Resolution asymmetric tautology on the first literal of `clause`. Only
  /// used to give a more precise reason when RUP fails.
  /// RAT on the first literal with at least one resolution candidate. A
  /// clause whose pivot never occurs negated is vacuously RAT; that case is
  /// left to the plain RUP failure.
  bool has_rat(const Clause& clause) {
    if (clause.empty()) return false;
    Literal pivot = clause.front();
    bool any = false;
    for (ClauseId id = 0; id < clauses_.size(); ++id) {
      if (!alive_[id]) continue;
      const Clause& d = clauses_[id];
      if (std::find(d.begin(), d.end(), -pivot) == d.end()) continue;
      any = true;
      Clause resolvent = clause;
      for (Literal lit : d)
        if (lit != -pivot) resolvent.push_back(lit);
      if (!is_tautology(canonical(resolvent)) && !has_rup(resolvent)) return false;
    }
    return any;
  }

 private:
  static std::size_t code(Literal lit) { return 2 * cnf::var_of(lit) + (lit < 0 ? 1 : 0); }

  static Clause canonical(const Clause& raw) {
    Clause c = raw;
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
  }

  static bool is_tautology(const Clause& sorted) {
    for (Literal lit : sorted)
      if (lit > 0 && std::binary_search(sorted.begin(), sorted.end(), -lit)) return true;
    return false;
  }

  static std::uint32_t max_var(const Clause& c) {
    std::uint32_t m = 0;
    for (Literal lit : c) m = std::max(m, cnf::var_of(lit));
    return m;
  }

  void ensure_var(std::uint32_t v) {
    if (values_.size() <= v) {
      values_.resize(v + 1, 0);
      watches_.resize(2 * (v + 1));
    }
  }

  int value(Literal lit) const {
    int v = values_[cnf::var_of(lit)];
    return lit > 0 ? v : -v;
  }

  // Returns false if `lit` is already false.
  bool assume(Literal lit) {
    int v = value(lit);
    if (v > 0) return true;
    if (v < 0) return false;
    values_[cnf::var_of(lit)] = lit > 0 ? 1 : -1;
    trail_.push_back(lit);
    return true;
  }

  // Returns true on conflict.
  bool propagate() {
    while (head_ < trail_.size()) {
      Literal false_lit = -trail_[head_++];
      std::vector<ClauseId>& ws = watches_[code(false_lit)];
      std::size_t keep = 0;
      for (std::size_t i = 0; i < ws.size(); ++i) {
        ClauseId id = ws[i];
        if (!alive_[id]) continue;
        Clause& c = clauses_[id];
        if (c[0] == false_lit) std::swap(c[0], c[1]);
        if (value(c[0]) > 0) {
          ws[keep++] = id;
          continue;
        }
        bool moved = false;
        for (std::size_t k = 2; k < c.size(); ++k) {
          if (value(c[k]) >= 0) {
            std::swap(c[1], c[k]);
            watches_[code(c[1])].push_back(id);
            moved = true;
            break;
          }
        }
        if (moved) continue;
        ws[keep++] = id;
        if (value(c[0]) < 0) {
          for (++i; i < ws.size(); ++i) ws[keep++] = ws[i];
          ws.resize(keep);
          return true;
        }
        assume(c[0]);
      }
      ws.resize(keep);
    }
    return false;
  }

  void reset() {
    for (Literal lit : trail_) values_[cnf::var_of(lit)] = 0;
    trail_.clear();
    head_ = 0;
  }

  std::vector<Clause> clauses_;
  std::vector<bool> alive_;
  std::map<Clause, std::vector<ClauseId>> by_key_;
  std::vector<ClauseId> units_;
  std::size_t alive_empty_ = 0;
  std::vector<std::vector<ClauseId>> watches_;
  std::vector<int> values_;
  std::vector<Literal> trail_;
  std::size_t head_ = 0;
};

enum class VerdictKind { Verified, Invalid, Incomplete };

enum class InvalidReason {
  LacksRup,
  /// The clause is a RAT inference, which this checker does not accept.
  RatNotSupported,
};

inline std::string_view to_string(VerdictKind k) {
  switch (k) {
    case VerdictKind::Verified: return "VERIFIED";
    case VerdictKind::Invalid: return "INVALID";
    case VerdictKind::Incomplete: return "INCOMPLETE";
  }
  return "?";
}

inline std::string_view to_string(InvalidReason r) {
  return r == InvalidReason::LacksRup ? "clause lacks RUP" : "RAT inference not supported (DRUP only)";
}

struct ProofVerdict {
  VerdictKind kind = VerdictKind::Incomplete;
  std::size_t steps_checked = 0;
  /// 1-based index of the offending step when Invalid.
  std::size_t failed_step = 0;
  InvalidReason reason = InvalidReason::LacksRup;
  /// Deletions that matched no clause (1-based step indices).
  std::vector<std::size_t> unmatched_deletions;
};

struct CheckOptions {
  bool ignore_deletions = false;
};

inline ProofVerdict check_proof(const cnf::Formula& formula, const ProofLog& proof, const CheckOptions& opts = {}) {
  RupDatabase db;
  for (const Clause& c : formula.clauses) db.add(c);

  ProofVerdict verdict;
  for (std::size_t i = 0; i < proof.steps.size(); ++i) {
    const ProofStep& step = proof.steps[i];
    verdict.steps_checked = i + 1;
    if (step.kind == ProofStep::Kind::Delete) {
      if (!opts.ignore_deletions && !db.remove(step.clause)) verdict.unmatched_deletions.push_back(i + 1);
      continue;
    }
    if (!db.has_rup(step.clause)) {
      verdict.kind = VerdictKind::Invalid;
      verdict.failed_step = i + 1;
      verdict.reason = db.has_rat(step.clause) ? InvalidReason::RatNotSupported : InvalidReason::LacksRup;
      return verdict;
    }
    if (step.clause.empty()) {
      verdict.kind = VerdictKind::Verified;
      return verdict;
    }
    db.add(step.clause);
  }
  verdict.kind = VerdictKind::Incomplete;
  return verdict;
}

inline std::string describe(const ProofVerdict& v) {
  std::string out(to_string(v.kind));
  if (v.kind == VerdictKind::Invalid)
    out += " at step " + std::to_string(v.failed_step) + ": " + std::string(to_string(v.reason));
  out += " (" + std::to_string(v.steps_checked) + " steps checked";
  if (!v.unmatched_deletions.empty())
    out += ", " + std::to_string(v.unmatched_deletions.size()) + " unmatched deletions ignored";
  out += ")";
  return out;
}

}  // namespace satex::proof
