#pragma once

// Hand-rolled random generators for property tests. Seeds are explicit so a
// failing case can be replayed from the printed seed.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "satex/cnf.hpp"

namespace satex::testing {

struct FormulaShape {
  std::uint32_t max_vars = 12;
  std::size_t max_clauses = 40;
  std::size_t max_width = 4;
  /// Allow empty clauses and duplicate literals.
  bool degenerate = false;
};

inline cnf::Formula random_formula(std::mt19937_64& rng, const FormulaShape& shape = {}) {
  std::uniform_int_distribution<std::uint32_t> nv(0, shape.max_vars);
  cnf::Formula f;
  f.num_vars = nv(rng);
  if (f.num_vars == 0) return f;
  std::uniform_int_distribution<std::size_t> nc(0, shape.max_clauses);
  std::uniform_int_distribution<std::size_t> width(shape.degenerate ? 0 : 1, shape.max_width);
  std::uniform_int_distribution<std::int32_t> var(1, static_cast<std::int32_t>(f.num_vars));
  std::bernoulli_distribution neg(0.5);
  const std::size_t clauses = nc(rng);
  for (std::size_t i = 0; i < clauses; ++i) {
    cnf::Clause c;
    const std::size_t w = width(rng);
    for (std::size_t k = 0; k < w; ++k) {
      cnf::Literal l = var(rng);
      if (!shape.degenerate && std::find(c.begin(), c.end(), l) != c.end()) continue;
      c.push_back(neg(rng) ? -l : l);
    }
    f.clauses.push_back(std::move(c));
  }
  return f;
}

/// Formulas near the satisfiability threshold, so both answers are common.
inline cnf::Formula random_3sat(std::mt19937_64& rng, std::uint32_t vars, std::size_t clauses) {
  cnf::Formula f;
  f.num_vars = vars;
  std::uniform_int_distribution<std::int32_t> var(1, static_cast<std::int32_t>(vars));
  std::bernoulli_distribution neg(0.5);
  for (std::size_t i = 0; i < clauses; ++i) {
    cnf::Clause c;
    while (c.size() < std::min<std::size_t>(3, vars)) {
      cnf::Literal l = var(rng);
      if (std::find(c.begin(), c.end(), l) != c.end() || std::find(c.begin(), c.end(), -l) != c.end()) continue;
      c.push_back(neg(rng) ? -l : l);
    }
    f.clauses.push_back(std::move(c));
  }
  return f;
}

/// Random DIMACS text for the same formula: comments, odd spacing, clauses
/// split across lines and several clauses per line.
inline std::string messy_dimacs(std::mt19937_64& rng, const cnf::Formula& f) {
  std::bernoulli_distribution coin(0.3);
  std::string out;
  if (coin(rng)) out += "c generated\n";
  out += "p cnf " + std::to_string(f.num_vars) + " " + std::to_string(f.clauses.size()) + "\n";
  for (const auto& c : f.clauses) {
    if (coin(rng) && out.back() == '\n') out += "c between clauses\n";
    for (auto l : c) {
      out += std::to_string(l);
      out += coin(rng) ? "\n" : (coin(rng) ? "\t" : "  ");
    }
    out += "0";
    out += coin(rng) ? " " : "\n";
  }
  if (!out.empty() && out.back() != '\n') out += "\n";
  return out;
}

/// Pigeonhole principle: `pigeons` pigeons into `holes` holes, one variable
/// per (pigeon, hole) pair.
inline cnf::Formula pigeonhole(int pigeons, int holes) {
  cnf::Formula f;
  f.num_vars = static_cast<std::uint32_t>(pigeons * holes);
  auto x = [&](int p, int h) { return static_cast<cnf::Literal>(p * holes + h + 1); };
  for (int p = 0; p < pigeons; ++p) {
    cnf::Clause c;
    for (int h = 0; h < holes; ++h) c.push_back(x(p, h));
    f.clauses.push_back(c);
  }
  for (int h = 0; h < holes; ++h)
    for (int p = 0; p < pigeons; ++p)
      for (int q = p + 1; q < pigeons; ++q) f.clauses.push_back({-x(p, h), -x(q, h)});
  return f;
}

}  // namespace satex::testing
