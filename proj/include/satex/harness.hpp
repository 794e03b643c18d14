#pragma once

// Solver x instance campaigns. Rows stream to an append-only JSON Lines file
// (one campaign header record, then one record per finished run) written by
// a single writer thread; summaries are computed from the loaded rows.

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "satex/cnf.hpp"
#include "satex/proof.hpp"
#include "satex/registry.hpp"
#include "satex/runtime.hpp"

namespace satex {

class HarnessError : public std::runtime_error {
 public:
  enum class Kind { UnresolvedSpec, InstanceMissing, BadMatrix, ResultsUnwritable };

  HarnessError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct JobMatrix {
  std::vector<SolverSpec> solvers;
  std::vector<fs::path> instances;
  ResourceLimits limits;
  unsigned parallelism = 1;
  bool verify_models = true;
  bool check_proofs = false;
  FetchPolicy policy = FetchPolicy::PreferRemote;
};

struct ResultRow {
  std::string solver;
  std::string instance;
  /// What the solver asserted; Unknown when it asserted nothing or the run
  /// hit a limit or crashed.
  Status claimed = Status::Unknown;
  Status status = Status::Unknown;
  int exit_code = kExitUnknown;
  int raw_exit_code = 0;
  double wall_time = 0.0;
  std::optional<bool> model_verified;
  std::optional<std::string> proof_verdict;
  std::optional<std::string> error;
  std::string stdout_path;
  std::string stderr_path;
  std::optional<std::string> proof_path;
};

struct CampaignInfo {
  ResourceLimits limits;
  std::string backend;
  std::string registry_digest;
  std::string start_time;
  unsigned parallelism = 1;
  std::vector<std::string> solvers;
  std::vector<std::string> instances;
};

struct ResultTable {
  CampaignInfo campaign;
  std::vector<ResultRow> rows;
};

// ---------------------------------------------------------------------------
// Judging a single run

struct Assessment {
  Status claimed = Status::Unknown;
  NormalizedStatus normalized{Status::Unknown, kExitUnknown};
  std::optional<cnf::Evaluation> verification;
  std::optional<proof::ProofVerdict> proof;
  std::optional<std::string> error;
};

struct AssessOptions {
  bool verify_model = true;
  bool check_proof = false;
};

/// Combines the runtime outcome with the solver's own output. A run without
/// an `s` line but with exit code 10/20 counts as a Sat/Unsat claim. A Sat
/// claim without a `v` model fails verification when verification is on.
inline Assessment assess_run(const RunOutcome& outcome, const cnf::Formula* formula, const AssessOptions& opts) {
  Assessment a;
  Status raw = outcome.status;
  cnf::SolverClaim claim;
  try {
    std::ifstream out(outcome.stdout_path);
    claim = cnf::parse_solver_output(out);
  } catch (const cnf::OutputError& e) {
    a.error = e.what();
    if (raw == Status::Unknown) raw = Status::CrashOrError;
  }
  if (claim.status == Status::Unknown && !claim.model) {
    if (outcome.raw_exit_code == kExitSat) claim.status = Status::Sat;
    else if (outcome.raw_exit_code == kExitUnsat) claim.status = Status::Unsat;
  }
  const bool limited = raw == Status::Timeout || raw == Status::MemOut || raw == Status::CrashOrError;
  a.claimed = limited ? Status::Unknown : claim.status;

  if (!limited && claim.status == Status::Sat && opts.verify_model && formula)
    a.verification = claim.model ? cnf::verify_model(*formula, *claim.model) : cnf::Evaluation::Undetermined;
  a.normalized = cnf::normalize_outcome(raw, claim.status, a.verification);

  if (opts.check_proof && formula && a.normalized.status == Status::Unsat && outcome.proof_path) {
    std::error_code ec;
    if (fs::is_regular_file(*outcome.proof_path, ec)) {
      try {
        a.proof = proof::check_proof(*formula, proof::parse_drup(read_file(*outcome.proof_path)));
      } catch (const proof::ProofParseError& e) {
        a.error = e.what();
      }
    } else {
      a.error = "proof file missing: " + outcome.proof_path->string();
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Results file

namespace detail {

inline json limits_json(const ResourceLimits& l) {
  json j;
  j["wall_timeout"] = std::isfinite(l.wall_timeout) ? json(l.wall_timeout) : json(nullptr);
  j["memory_limit"] = l.memory_limit ? json(*l.memory_limit) : json(nullptr);
  j["cpu_count"] = l.cpu_count ? json(*l.cpu_count) : json(nullptr);
  return j;
}

inline ResourceLimits limits_from_json(const json& j) {
  ResourceLimits l;
  if (j.contains("wall_timeout") && !j["wall_timeout"].is_null()) l.wall_timeout = j["wall_timeout"].get<double>();
  if (j.contains("memory_limit") && !j["memory_limit"].is_null()) l.memory_limit = j["memory_limit"].get<std::uint64_t>();
  if (j.contains("cpu_count") && !j["cpu_count"].is_null()) l.cpu_count = j["cpu_count"].get<unsigned>();
  return l;
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> opt_get(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<T>();
}

}  // namespace detail

inline json to_json(const CampaignInfo& c) {
  json j;
  j["record"] = "campaign";
  j["limits"] = detail::limits_json(c.limits);
  j["backend"] = c.backend;
  j["registry_digest"] = c.registry_digest;
  j["start_time"] = c.start_time;
  j["parallelism"] = c.parallelism;
  j["solvers"] = c.solvers;
  j["instances"] = c.instances;
  return j;
}

inline json to_json(const ResultRow& r) {
  json j;
  j["record"] = "row";
  j["solver"] = r.solver;
  j["instance"] = r.instance;
  j["claimed"] = to_string(r.claimed);
  j["status"] = to_string(r.status);
  j["exit_code"] = r.exit_code;
  j["raw_exit_code"] = r.raw_exit_code;
  j["wall_time"] = r.wall_time;
  j["model_verified"] = detail::opt_json(r.model_verified);
  j["proof"] = detail::opt_json(r.proof_verdict);
  j["error"] = detail::opt_json(r.error);
  j["stdout"] = r.stdout_path;
  j["stderr"] = r.stderr_path;
  j["proof_path"] = detail::opt_json(r.proof_path);
  return j;
}

inline ResultRow row_from_json(const json& j) {
  ResultRow r;
  r.solver = j.at("solver").get<std::string>();
  r.instance = j.at("instance").get<std::string>();
  r.claimed = status_from_string(j.at("claimed").get<std::string>()).value_or(Status::Unknown);
  r.status = status_from_string(j.at("status").get<std::string>()).value_or(Status::CrashOrError);
  r.exit_code = j.at("exit_code").get<int>();
  r.raw_exit_code = j.at("raw_exit_code").get<int>();
  r.wall_time = j.at("wall_time").get<double>();
  r.model_verified = detail::opt_get<bool>(j, "model_verified");
  r.proof_verdict = detail::opt_get<std::string>(j, "proof");
  r.error = detail::opt_get<std::string>(j, "error");
  r.stdout_path = j.value("stdout", "");
  r.stderr_path = j.value("stderr", "");
  r.proof_path = detail::opt_get<std::string>(j, "proof_path");
  return r;
}

inline void sort_rows(std::vector<ResultRow>& rows) {
  std::sort(rows.begin(), rows.end(),
            [](const ResultRow& a, const ResultRow& b) { return std::tie(a.solver, a.instance) < std::tie(b.solver, b.instance); });
}

/// Reads a results file. A torn final line (crash mid-write) is dropped;
/// corruption anywhere else is an error.
inline ResultTable load_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError(HarnessError::Kind::ResultsUnwritable, "cannot read results file " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  ResultTable t;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    json j = json::parse(lines[i], nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      if (i + 1 == lines.size()) break;
      throw HarnessError(HarnessError::Kind::BadMatrix, path.string() + ":" + std::to_string(i + 1) + ": unreadable record");
    }
    const std::string kind = j.value("record", "");
    if (kind == "campaign") {
      t.campaign.limits = detail::limits_from_json(j.at("limits"));
      t.campaign.backend = j.value("backend", "");
      t.campaign.registry_digest = j.value("registry_digest", "");
      t.campaign.start_time = j.value("start_time", "");
      t.campaign.parallelism = j.value("parallelism", 1u);
      t.campaign.solvers = j.value("solvers", std::vector<std::string>{});
      t.campaign.instances = j.value("instances", std::vector<std::string>{});
    } else if (kind == "row") {
      t.rows.push_back(row_from_json(j));
    }
  }
  sort_rows(t.rows);
  return t;
}

namespace detail {

/// The only writer of a results file. Each record is flushed as a whole line.
class ResultWriter {
 public:
  explicit ResultWriter(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    file_ = std::fopen(path.c_str(), "w");
    if (!file_) throw HarnessError(HarnessError::Kind::ResultsUnwritable, "cannot write results file " + path.string());
    thread_ = std::thread([this] { loop(); });
  }
  ResultWriter(const ResultWriter&) = delete;
  ResultWriter& operator=(const ResultWriter&) = delete;
  ~ResultWriter() { close(); }

  void push(std::string line) {
    {
      std::lock_guard<std::mutex> g(mu_);
      queue_.push_back(std::move(line));
    }
    cv_.notify_one();
  }

  void close() {
    if (!file_) return;
    {
      std::lock_guard<std::mutex> g(mu_);
      done_ = true;
    }
    cv_.notify_one();
    thread_.join();
    std::fclose(file_);
    file_ = nullptr;
  }

 private:
  void loop() {
    std::unique_lock<std::mutex> lock(mu_);
    for (;;) {
      cv_.wait(lock, [this] { return done_ || !queue_.empty(); });
      while (!queue_.empty()) {
        std::string line = std::move(queue_.front());
        queue_.pop_front();
        lock.unlock();
        line += '\n';
        std::fwrite(line.data(), 1, line.size(), file_);
        std::fflush(file_);
        ::fsync(::fileno(file_));
        lock.lock();
      }
      if (done_) return;
    }
  }

  std::FILE* file_ = nullptr;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool done_ = false;
  std::thread thread_;
};

inline std::string dir_token(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_')) c = '_';
  return s;
}

}  // namespace detail

struct CampaignPaths {
  fs::path results;
  /// Per-run directories (stdout, stderr, proof) live below this.
  fs::path work_dir;
};

/// Runs every (solver, instance) pair once. Per-run problems become
/// CrashOrError rows; only unknown specs or missing instances abort.
inline ResultTable run_matrix(const Registry& registry, const JobMatrix& matrix, ExecutionBackend& backend, const CampaignPaths& paths) {
  if (matrix.parallelism < 1) throw HarnessError(HarnessError::Kind::BadMatrix, "parallelism must be at least 1");
  matrix.limits.validate();
  for (const auto& s : matrix.solvers)
    if (!registry.find(s)) throw HarnessError(HarnessError::Kind::UnresolvedSpec, "unknown solver " + s.str());
  for (const auto& i : matrix.instances)
    if (std::error_code ec; !fs::is_regular_file(i, ec))
      throw HarnessError(HarnessError::Kind::InstanceMissing, "instance not found: " + i.string());

  ResultTable table;
  table.campaign.limits = matrix.limits;
  table.campaign.backend = std::string(to_string(backend.kind()));
  table.campaign.registry_digest = registry.digest();
  table.campaign.start_time = utc_timestamp();
  table.campaign.parallelism = matrix.parallelism;
  for (const auto& s : matrix.solvers) table.campaign.solvers.push_back(s.str());
  for (const auto& i : matrix.instances) table.campaign.instances.push_back(i.string());

  // Images and formulas are prepared once, up front.
  std::vector<std::optional<ImageRef>> images(matrix.solvers.size());
  std::vector<std::string> image_errors(matrix.solvers.size());
  for (std::size_t s = 0; s < matrix.solvers.size(); ++s) {
    try {
      images[s] = fetch_or_build(backend, registry, matrix.solvers[s], matrix.policy);
    } catch (const std::exception& e) {
      image_errors[s] = e.what();
    }
  }
  const bool need_formula = matrix.verify_models || matrix.check_proofs;
  std::vector<std::optional<cnf::Formula>> formulas(matrix.instances.size());
  std::vector<std::string> formula_errors(matrix.instances.size());
  if (need_formula)
    for (std::size_t i = 0; i < matrix.instances.size(); ++i) {
      try {
        formulas[i] = cnf::parse_dimacs_file(matrix.instances[i]);
      } catch (const std::exception& e) {
        formula_errors[i] = e.what();
      }
    }

  detail::ResultWriter writer(paths.results);
  writer.push(to_json(table.campaign).dump());

  const std::size_t total = matrix.solvers.size() * matrix.instances.size();
  std::vector<ResultRow> rows(total);
  std::atomic<std::size_t> next{0};

  auto job = [&](std::size_t k) {
    const std::size_t s = k / matrix.instances.size(), i = k % matrix.instances.size();
    const SolverSpec& spec = matrix.solvers[s];
    const SolverEntry& entry = registry.at(spec);
    ResultRow row;
    row.solver = spec.str();
    row.instance = matrix.instances[i].string();
    auto crash = [&](const std::string& why) {
      row.status = Status::CrashOrError;
      row.exit_code = kExitOther;
      row.error = why;
    };
    if (!images[s]) {
      crash(image_errors[s]);
      return row;
    }
    const fs::path dir = paths.work_dir / detail::dir_token(spec.name + "_" + spec.version) /
                         (std::to_string(i) + "-" + detail::dir_token(matrix.instances[i].filename().string()));
    try {
      fs::create_directories(dir);
      std::optional<fs::path> proof_out;
      if (matrix.check_proofs && entry.run.proof_capable) proof_out = dir / "proof.drup";
      const RunFiles files = RunFiles::in(dir);
      RunOutcome outcome = run_solver(backend, *images[s], matrix.instances[i], proof_out, matrix.limits, files);
      const cnf::Formula* formula = formulas[i] ? &*formulas[i] : nullptr;
      Assessment a = assess_run(outcome, formula, {matrix.verify_models, matrix.check_proofs});
      row.claimed = a.claimed;
      row.status = a.normalized.status;
      row.exit_code = a.normalized.exit_code;
      row.raw_exit_code = outcome.raw_exit_code;
      row.wall_time = outcome.wall_time;
      row.stdout_path = outcome.stdout_path.string();
      row.stderr_path = outcome.stderr_path.string();
      if (outcome.proof_path) row.proof_path = outcome.proof_path->string();
      if (a.verification) row.model_verified = *a.verification == cnf::Evaluation::Satisfied;
      if (a.proof) row.proof_verdict = proof::describe(*a.proof);
      row.error = a.error;
      if (!formula && need_formula && !formula_errors[i].empty()) row.error = "instance unreadable: " + formula_errors[i];
    } catch (const std::exception& e) {
      crash(e.what());
    }
    return row;
  };

  auto worker = [&] {
    for (std::size_t k; (k = next++) < total;) {
      rows[k] = job(k);
      writer.push(to_json(rows[k]).dump());
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n = std::min<std::size_t>(matrix.parallelism, std::max<std::size_t>(total, 1));
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  writer.close();

  table.rows = std::move(rows);
  sort_rows(table.rows);
  return table;
}

// ---------------------------------------------------------------------------
// Analysis

struct Disagreement {
  std::string instance;
  /// Every row on the instance that claimed Sat or Unsat.
  std::vector<ResultRow> rows;
};

inline std::vector<Disagreement> detect_disagreements(const ResultTable& table) {
  std::map<std::string, std::vector<ResultRow>> by_instance;
  for (const auto& r : table.rows)
    if (r.claimed == Status::Sat || r.claimed == Status::Unsat) by_instance[r.instance].push_back(r);
  std::vector<Disagreement> out;
  for (auto& [inst, rows] : by_instance) {
    bool sat = false, unsat = false;
    for (const auto& r : rows) (r.claimed == Status::Sat ? sat : unsat) = true;
    if (sat && unsat) {
      sort_rows(rows);
      out.push_back({inst, std::move(rows)});
    }
  }
  return out;
}

struct SolverSummary {
  std::string solver;
  std::size_t runs = 0;
  std::size_t solved = 0;
  std::size_t sat = 0;
  std::size_t unsat = 0;
  double par2 = 0.0;
  /// Zero when nothing was solved.
  double mean_solved_time = 0.0;
};

/// Per-solver counts and PAR-2 (unsolved runs cost twice the timeout),
/// ordered by solved desc, PAR-2 asc, name asc.
inline std::vector<SolverSummary> summarize(const ResultTable& table) {
  std::map<std::string, SolverSummary> acc;
  for (const auto& s : table.campaign.solvers) acc[s].solver = s;
  const double penalty = 2.0 * table.campaign.limits.wall_timeout;
  for (const auto& r : table.rows) {
    SolverSummary& s = acc[r.solver];
    s.solver = r.solver;
    ++s.runs;
    if (r.status == Status::Sat || r.status == Status::Unsat) {
      ++s.solved;
      ++(r.status == Status::Sat ? s.sat : s.unsat);
      s.par2 += r.wall_time;
      s.mean_solved_time += r.wall_time;
    } else {
      s.par2 += penalty;
    }
  }
  std::vector<SolverSummary> out;
  for (auto& [name, s] : acc) {
    if (s.solved) s.mean_solved_time /= static_cast<double>(s.solved);
    out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const SolverSummary& a, const SolverSummary& b) {
    if (a.solved != b.solved) return a.solved > b.solved;
    if (a.par2 != b.par2) return a.par2 < b.par2;
    return a.solver < b.solver;
  });
  return out;
}

namespace detail {

inline std::string fixed(double v, int prec) {
  if (!std::isfinite(v)) return "inf";
  std::ostringstream o;
  o << std::fixed << std::setprecision(prec) << v;
  return o.str();
}

}  // namespace detail

inline std::string render_summary_text(const std::vector<SolverSummary>& rows) {
  const std::vector<std::string> head{"solver", "runs", "solved", "sat", "unsat", "par2", "mean_solved_s"};
  std::vector<std::vector<std::string>> cells{head};
  for (const auto& s : rows)
    cells.push_back({s.solver, std::to_string(s.runs), std::to_string(s.solved), std::to_string(s.sat), std::to_string(s.unsat),
                     detail::fixed(s.par2, 2), detail::fixed(s.mean_solved_time, 3)});
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) line += row[c] + std::string(width[c] - row[c].size(), ' ');
      else line += "  " + std::string(width[c] - row[c].size(), ' ') + row[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

inline std::string render_summary_csv(const std::vector<SolverSummary>& rows) {
  std::string out = "solver,runs,solved,sat,unsat,par2,mean_solved_s\n";
  for (const auto& s : rows)
    out += s.solver + "," + std::to_string(s.runs) + "," + std::to_string(s.solved) + "," + std::to_string(s.sat) + "," +
           std::to_string(s.unsat) + "," + detail::fixed(s.par2, 6) + "," + detail::fixed(s.mean_solved_time, 6) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Matrix files

struct MatrixFile {
  JobMatrix matrix;
  CampaignPaths paths;
};

/// Reads a campaign description:
///   {"solvers": ["*:2019", ...], "instances": ["a.cnf", ...], "timeout": 10,
///    "memory_limit": null, "cpus": null, "parallelism": 2,
///    "verify_models": true, "check_proofs": false,
///    "results": "results.jsonl", "work_dir": "runs"}
/// Relative paths are taken relative to the file's directory.
inline MatrixFile load_matrix(const fs::path& file, const Registry& registry) {
  json j;
  try {
    j = json::parse(read_file(file));
  } catch (const std::exception& e) {
    throw HarnessError(HarnessError::Kind::BadMatrix, file.string() + ": " + e.what());
  }
  const fs::path base = file.parent_path();
  auto rel = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  MatrixFile m;
  try {
    std::vector<SolverSpec> specs;
    for (const auto& pat : j.at("solvers")) {
      try {
        for (auto& s : resolve(registry, pat.get<std::string>()))
          if (std::find(specs.begin(), specs.end(), s) == specs.end()) specs.push_back(s);
      } catch (const RegistryError& e) {
        throw HarnessError(HarnessError::Kind::UnresolvedSpec, e.what());
      }
    }
    m.matrix.solvers = specs;
    for (const auto& p : j.at("instances")) m.matrix.instances.push_back(rel(p.get<std::string>()));
    if (j.contains("timeout") && !j["timeout"].is_null()) m.matrix.limits.wall_timeout = j["timeout"].get<double>();
    if (j.contains("memory_limit") && !j["memory_limit"].is_null()) m.matrix.limits.memory_limit = j["memory_limit"].get<std::uint64_t>();
    if (j.contains("cpus") && !j["cpus"].is_null()) m.matrix.limits.cpu_count = j["cpus"].get<unsigned>();
    m.matrix.parallelism = j.value("parallelism", 1u);
    m.matrix.verify_models = j.value("verify_models", true);
    m.matrix.check_proofs = j.value("check_proofs", false);
    m.paths.results = rel(j.value("results", std::string("results.jsonl")));
    m.paths.work_dir = rel(j.value("work_dir", std::string("runs")));
  } catch (const json::exception& e) {
    throw HarnessError(HarnessError::Kind::BadMatrix, file.string() + ": " + e.what());
  }
  return m;
}

}  // namespace satex
