// Acceptance run: every criterion is checked at its stated tolerance and
// time budget, one PASS / FAIL / SKIP line each. Exit status is 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "drup_dpll.hpp"
#include "fake_container.hpp"
#include "generators.hpp"

using namespace satex;
using namespace satex::testing;

namespace {

struct Check {
  std::vector<std::string> failures;
  std::size_t failed = 0;
  std::optional<std::string> skipped;

  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (++failed <= 5) failures.push_back(what);
  }
};

struct Criterion {
  int id;
  const char* title;
  double budget;  // seconds; 0 for none
  std::function<void(Check&)> run;
};

// ---------------------------------------------------------------------------
// Independent oracles

bool satisfies(const cnf::Formula& f, const cnf::Assignment& model) {
  for (const auto& c : f.clauses) {
    bool sat = false;
    for (auto l : c) {
      auto v = model.value(static_cast<std::uint32_t>(std::abs(l)));
      if (v && *v == (l > 0)) sat = true;
    }
    if (!sat) return false;
  }
  return true;
}

// Brute force over all assignments, sharing no code with the library oracle.
bool brute_force_sat(const cnf::Formula& f) {
  const std::uint32_t n = f.num_vars;
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
    bool all = true;
    for (const auto& c : f.clauses) {
      bool sat = false;
      for (auto l : c) {
        const bool v = (bits >> (cnf::var_of(l) - 1)) & 1;
        if (v == (l > 0)) sat = true;
      }
      if (!sat) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  return false;
}

Status truth_of(const fs::path& file) { return brute_force_sat(cnf::parse_dimacs_file(file)) ? Status::Sat : Status::Unsat; }

int expected_exit(Status s) {
  if (s == Status::Sat) return 10;
  if (s == Status::Unsat) return 20;
  if (s == Status::Unknown) return 0;
  return 1;
}

proof::ProofLog random_proof(std::mt19937_64& rng, std::uint32_t vars) {
  proof::ProofLog log;
  std::uniform_int_distribution<int> len(0, 6), width(0, 3);
  std::uniform_int_distribution<std::int32_t> var(1, std::max<std::int32_t>(1, static_cast<std::int32_t>(vars)));
  std::bernoulli_distribution coin(0.5), del(0.2);
  for (int i = len(rng); i > 0; --i) {
    cnf::Clause c;
    for (int k = width(rng); k > 0; --k) c.push_back(coin(rng) ? var(rng) : -var(rng));
    log.steps.push_back({del(rng) ? proof::ProofStep::Kind::Delete : proof::ProofStep::Kind::Add, c});
  }
  log.steps.push_back({proof::ProofStep::Kind::Add, {}});
  return log;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

struct Store {
  TempDir dir{"satex-accept"};
  Registry reg = fixture_registry();
  ProcessBackend backend{dir / "store"};
  std::map<std::string, std::string> env{{"SATHERITAGE_REGISTRY", fixture_registry_dir().string()},
                                         {"SATHERITAGE_STORE", (dir / "store").string()},
                                         {"SATHERITAGE_CACHE", (dir / "cache").string()},
                                         {"SATHERITAGE_BACKEND", "process"}};
  Store() { install_fixtures(backend, reg); }
  CliResult cli(const std::vector<std::string>& args) const { return run_cli(args, env); }

  void prime_cache() const {
    ArchiveCache cache(dir / "cache");
    fs::create_directories(cache.root());
    for (const auto& name : {"fixture-solver-src.tar.gz", "toybin-bin.tar.gz"}) {
      std::string bytes = read_file(kFixtures / "archives" / name);
      write_file(cache.path_for(sha256_hex(bytes)), bytes);
    }
  }
};

// ---------------------------------------------------------------------------

void interface_fidelity(Check& c) {
  Store s;
  const auto specs = s.reg.specs();
  std::set<std::string> sets;
  for (const auto& sp : specs) sets.insert(sp.version);
  c.expect(sets.size() >= 2 && specs.size() >= 4, "fixture registry needs >= 2 sets and >= 4 entries");

  CliResult r = s.cli({"list"});
  std::vector<std::string> all;
  for (const auto& sp : specs) all.push_back(sp.str());
  c.expect(r.exit_code == 0 && lines_of(r.out) == all, "list prints every spec, sorted");
  std::vector<std::string> y2000;
  for (const auto& sp : specs)
    if (sp.version == "2000") y2000.push_back(sp.str());
  r = s.cli({"list", "*:2000"});
  c.expect(r.exit_code == 0 && lines_of(r.out) == y2000, "list '*:2000' prints the 2000 set");
  r = s.cli({"list", "nosuch"});
  c.expect(r.exit_code == 1 && r.out.empty(), "list with no match exits 1");

  for (const auto& sp : specs) {
    const std::string want = "satex/" + sp.name + ":" + sp.version;
    c.expect(image_name(sp) == want, "image name of " + sp.str());
    r = s.cli({"info", "--json", sp.str()});
    c.expect(r.exit_code == 0 && json::parse(r.out)["image"] == want, "info --json image of " + sp.str());
  }
  r = s.cli({"info", "cadical:2019"});
  c.expect(r.exit_code == 0 && r.out.find("\nrun:") != std::string::npos && r.out.find("\nrun with proof:") != std::string::npos,
           "info shows the run command with and without proof");

  for (const auto& name : fixture_instances()) {
    r = s.cli({"run", "toy:2000", instance(name).string()});
    c.expect(r.exit_code == expected_exit(truth_of(instance(name))), "run toy:2000 " + name + " exit " + std::to_string(r.exit_code));
  }
  const fs::path proof = s.dir / "proof.out";
  r = s.cli({"run", "toy:2000", instance("unsat-php-3-2.cnf").string(), proof.string()});
  c.expect(r.exit_code == 20 && fs::is_regular_file(proof), "run with proof exits 20 and writes the proof");
  r = s.cli({"run", "toy*:2000", instance("sat-chain.cnf").string()});
  c.expect(r.exit_code == 2 && r.err.find("toy-bin:2000") != std::string::npos, "ambiguous run exits 2 listing candidates");

  r = s.cli({"run-raw", "toy:2000", "--", "--help"});
  c.expect(r.exit_code == 0 && r.out.find("usage: toy") != std::string::npos, "run-raw passes --help through");
  r = s.cli({"run-raw", "toy:2000", "--", "--echo-args", "a b"});
  c.expect(r.out.find("<a b>") != std::string::npos, "run-raw keeps an argument with a space whole");
  c.expect(s.cli({"run-raw", "toy:2000"}).exit_code == 2, "run-raw without -- exits 2");

  r = s.cli({"build", "*:2000"});
  c.expect(r.exit_code == 2, "build on the process backend is a capability error");
  FakeContainer fake;
  auto env = s.env;
  env["SATHERITAGE_BACKEND"] = "container";
  env["SATHERITAGE_CONTAINER_CLI"] = fake.cli.string();
  env["FAKE_STATE"] = (fake.dir / "state").string();
  r = run_cli({"build", "*:2000"}, env);
  int builds = 0;
  for (const auto& l : lines_of(fake.log())) builds += l.rfind("build --tag satex/", 0) == 0;
  c.expect(r.exit_code == 0 && builds == static_cast<int>(y2000.size()), "build '*:2000' builds every 2000 image");
  for (const auto& sp : y2000) c.expect(r.out.find("satex/" + sp) != std::string::npos, "build summary names " + sp);
}

void recipe_determinism(Check& c) {
  Registry reg = fixture_registry();
  for (const auto& sp : reg.specs()) {
    const std::string golden = read_text(kFixtures / "golden" / (sp.name + "_" + sp.version + ".Dockerfile"));
    c.expect(!golden.empty(), "golden file for " + sp.str());
    for (int i = 0; i < 100; ++i) {
      BuildRecipe r = generate_build_recipe(reg, sp);
      if (r.text != golden) {
        c.expect(false, sp.str() + " generation " + std::to_string(i) + " differs from golden");
        break;
      }
      if (i > 0) continue;
      const bool source = reg.at(sp).source.kind == SourceKind::SourceArchive;
      std::size_t froms = 0;
      for (const auto& l : lines_of(r.text)) froms += l.rfind("FROM ", 0) == 0;
      c.expect((r.stage_count == 2) == source && froms == static_cast<std::size_t>(r.stage_count),
               sp.str() + ": two stages iff source archive");
    }
  }
  c.expect(generate_run_wrapper(reg.at(SolverSpec::parse("cadical:2019"))) ==
               read_text(kFixtures / "golden" / "cadical_2019.wrapper.sh"),
           "cadical wrapper matches golden");
}

void dimacs_suite(Check& c) {
  std::mt19937_64 rng(1000);
  for (int i = 0; i < 1000; ++i) {
    cnf::Formula f = random_formula(rng, {12, 40, 5, true});
    std::string text = messy_dimacs(rng, f);
    cnf::Formula parsed = cnf::parse_dimacs(text);
    c.expect(parsed == f, "round trip of messy text, case " + std::to_string(i));
    c.expect(cnf::parse_dimacs(cnf::serialize(f)) == f, "serialize round trip, case " + std::to_string(i));
    c.expect(cnf::parse_dimacs(gzip(text)) == f, "gzip transparency, case " + std::to_string(i));
  }
  std::vector<cnf::DimacsWarning> w;
  cnf::Formula f = cnf::parse_dimacs("p cnf 2 5\n1 0\n", {}, &w);
  c.expect(f.clauses.size() == 1 && w.size() == 1 && w[0].kind == cnf::DimacsErrorKind::HeaderMismatch,
           "header mismatch is a warning by default");
  bool strict = false;
  try {
    cnf::parse_dimacs("p cnf 2 5\n1 0\n", {true});
  } catch (const cnf::DimacsError& e) {
    strict = e.kind() == cnf::DimacsErrorKind::HeaderMismatch;
  }
  c.expect(strict, "header mismatch is an error in strict mode");
}

void oracle_equivalence(Check& c) {
  std::mt19937_64 rng(4);
  int sat = 0, unsat = 0;
  for (int i = 0; i < 1000; ++i) {
    cnf::Formula f = random_formula(rng, {12, 40, 4, false});
    auto a = cnf::solve_oracle(f, cnf::OracleMethod::Dpll);
    auto b = cnf::solve_oracle(f, cnf::OracleMethod::Enumerate);
    c.expect(a.status == b.status, "dpll and enumerate disagree on case " + std::to_string(i));
    c.expect((a.status == Status::Sat) == brute_force_sat(f), "status differs from brute force, case " + std::to_string(i));
    if (a.status == Status::Sat) {
      ++sat;
      c.expect(cnf::evaluate(f, a.model) == cnf::Evaluation::Satisfied && satisfies(f, a.model), "dpll model, case " + std::to_string(i));
      c.expect(cnf::evaluate(f, b.model) == cnf::Evaluation::Satisfied && satisfies(f, b.model),
               "enumerate model, case " + std::to_string(i));
    } else {
      ++unsat;
    }
  }
  c.expect(sat > 50 && unsat > 50, "generator covers both outcomes");
  cnf::Formula php = pigeonhole(3, 2);
  c.expect(cnf::solve_oracle(php, cnf::OracleMethod::Dpll).status == Status::Unsat &&
               cnf::solve_oracle(php, cnf::OracleMethod::Enumerate).status == Status::Unsat && !brute_force_sat(php),
           "PHP(3,2) is Unsat");
}

void proof_soundness(Check& c) {
  using proof::VerdictKind;
  std::mt19937_64 rng(5);
  int verified = 0;
  for (int i = 0; i < 1500; ++i) {
    cnf::Formula f;
    proof::ProofLog log;
    if (i % 2 == 0) {
      f = random_3sat(rng, 3 + static_cast<std::uint32_t>(rng() % 8), 5 + rng() % 40);
      DrupRun run = solve_with_proof(f);
      log = run.sat ? random_proof(rng, f.num_vars) : run.proof;
    } else {
      f = random_formula(rng, {6, 12, 3, true});
      log = random_proof(rng, f.num_vars);
    }
    proof::ProofVerdict v = proof::check_proof(f, log);
    proof::ProofVerdict kept = proof::check_proof(f, log, {true});
    if (v.kind == VerdictKind::Verified) {
      ++verified;
      c.expect(!brute_force_sat(f), "false Verified on a satisfiable formula, case " + std::to_string(i));
      c.expect(kept.kind != VerdictKind::Invalid, "ignoring deletions flipped Verified to Invalid, case " + std::to_string(i));
    }
    if (kept.kind == VerdictKind::Verified) c.expect(!brute_force_sat(f), "false Verified ignoring deletions, case " + std::to_string(i));
  }
  c.expect(verified > 100, "enough Verified proofs to be meaningful");

  auto v = proof::check_proof(cnf::Formula{1, {{1}, {-1}}}, proof::parse_drup("0\n"));
  c.expect(v.kind == VerdictKind::Verified, "worked example 1 is Verified");
  v = proof::check_proof(cnf::Formula{2, {{1, 2}}}, proof::parse_drup("1 0\n0\n"));
  c.expect(v.kind == VerdictKind::Invalid && v.failed_step == 1 && v.reason == proof::InvalidReason::LacksRup,
           "worked example 2 is Invalid at step 1");
  v = proof::check_proof(cnf::Formula{1, {{1}}}, proof::ProofLog{});
  c.expect(v.kind == VerdictKind::Incomplete, "worked example 3 is Incomplete");
}

void normalization_contract(Check& c) {
  c.expect(normalized_exit(Status::Sat) == 10 && normalized_exit(Status::Unsat) == 20 && normalized_exit(Status::Unknown) == 0 &&
               normalized_exit(Status::Timeout) == 1 && normalized_exit(Status::MemOut) == 1 &&
               normalized_exit(Status::CrashOrError) == 1,
           "exit mapping table");
  Store s;
  for (const auto& name : fixture_instances()) {
    const fs::path inst = instance(name);
    const Status truth = truth_of(inst);
    CliResult r = s.cli({"run", "toy:2000", inst.string()});
    c.expect(r.exit_code == expected_exit(truth), "honest on " + name);

    // The liar's own model, judged independently.
    r = s.cli({"run", "liar:2019", inst.string()});
    std::istringstream out(r.out);
    cnf::SolverClaim claim = cnf::parse_solver_output(out);
    const cnf::Formula f = cnf::parse_dimacs_file(inst);
    const bool good = claim.status == Status::Sat && claim.model && satisfies(f, *claim.model);
    c.expect(claim.status == Status::Sat && !good, "liar claims Sat with a bad model on " + name);
    c.expect(r.exit_code == expected_exit(good ? Status::Sat : Status::CrashOrError), "liar downgraded on " + name);

    r = s.cli({"run", "--timeout", "0.2", "sleeper:2019", inst.string()});
    c.expect(r.exit_code == expected_exit(Status::Timeout), "sleeper times out on " + name);
  }

  JobMatrix m;
  m.solvers = {SolverSpec::parse("toy:2000"), SolverSpec::parse("liar:2019")};
  for (const auto& name : fixture_instances()) m.instances.push_back(instance(name));
  m.limits.wall_timeout = 5;
  m.parallelism = 2;
  m.policy = FetchPolicy::LocalOnly;
  ResultTable t = run_matrix(s.reg, m, s.backend, {s.dir / "n.jsonl", s.dir / "n"});
  std::set<std::string> want_flagged;
  for (const auto& r : t.rows) {
    c.expect(r.exit_code == expected_exit(r.status), "row exit code of " + r.solver + " on " + r.instance);
    if (r.solver == "liar:2019") c.expect(r.status == Status::CrashOrError, "liar row downgraded on " + r.instance);
    if (r.solver == "toy:2000" && truth_of(r.instance) == Status::Unsat) want_flagged.insert(r.instance);
  }
  std::set<std::string> flagged;
  for (const auto& d : detect_disagreements(t)) flagged.insert(d.instance);
  c.expect(!flagged.empty() && flagged == want_flagged, "liar flagged exactly on the unsatisfiable instances");
}

void harness_campaign(Check& c) {
  Store s;
  const double limit = 1.0;
  JobMatrix m;
  m.solvers = {SolverSpec::parse("toy:2000"), SolverSpec::parse("liar:2019"), SolverSpec::parse("sleeper:2019")};
  for (const auto& name : fixture_instances()) m.instances.push_back(instance(name));
  m.limits.wall_timeout = limit;
  m.policy = FetchPolicy::LocalOnly;

  std::optional<std::map<std::pair<std::string, std::string>, Status>> first;
  for (unsigned p : {1u, 4u}) {
    m.parallelism = p;
    const std::string tag = "p" + std::to_string(p);
    ResultTable t = run_matrix(s.reg, m, s.backend, {s.dir / (tag + ".jsonl"), s.dir / tag});
    c.expect(t.rows.size() == 18, "18 rows at parallelism " + std::to_string(p));
    c.expect(load_results(s.dir / (tag + ".jsonl")).rows.size() == 18, "18 rows on disk at parallelism " + std::to_string(p));
    std::map<std::pair<std::string, std::string>, Status> statuses;
    std::map<std::string, double> par2;
    for (const auto& r : t.rows) {
      statuses[{r.solver, r.instance}] = r.status;
      const bool solved = r.status == Status::Sat || r.status == Status::Unsat;
      par2[r.solver] += solved ? r.wall_time : 2 * limit;
      if (r.solver == "sleeper:2019") {
        c.expect(r.status == Status::Timeout, "sleeper row is Timeout");
        c.expect(r.wall_time >= limit && r.wall_time <= limit + 0.5,
                 "sleeper wall time " + std::to_string(r.wall_time) + " outside [limit, limit+0.5]");
      }
      if (r.solver == "toy:2000") c.expect(r.status == truth_of(r.instance), "honest row matches ground truth");
    }
    if (!first) first = statuses;
    else c.expect(statuses == *first, "status tables differ between parallelism 1 and 4");
    for (const auto& sum : summarize(t))
      c.expect(std::abs(sum.par2 - par2[sum.solver]) < 1e-9, "PAR-2 of " + sum.solver + " at parallelism " + std::to_string(p));
  }

  ResultTable worked;
  worked.campaign.limits.wall_timeout = 10;
  worked.campaign.solvers = {"a"};
  for (auto [inst, st, t] : {std::tuple{"i1", Status::Sat, 1.0}, std::tuple{"i2", Status::Unsat, 1.0}, std::tuple{"i3", Status::Timeout, 10.0}}) {
    ResultRow r;
    r.solver = "a";
    r.instance = inst;
    r.status = st;
    r.wall_time = t;
    worked.rows.push_back(r);
  }
  auto sum = summarize(worked);
  c.expect(sum.size() == 1 && sum[0].par2 == 1.0 + 1.0 + 2 * 10.0, "PAR-2 worked example is 22");
}

void archive_properties(Check& c) {
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  MemoryTransport net;
  net.put("https://a.invalid/x.tgz", "tampered");
  SourceRef src{"https://a.invalid/x.tgz", sha256_hex("original"), SourceKind::SourceArchive, std::nullopt};
  bool quarantined = false;
  try {
    fetch(src, cache, net);
  } catch (const ArchiveError& e) {
    quarantined = e.kind() == ArchiveError::Kind::ChecksumMismatch && read_text(e.quarantined()) == "tampered" &&
                  e.quarantined().parent_path() == cache.quarantine_dir();
  }
  c.expect(quarantined && !cache.contains(src.sha256), "checksum mismatch quarantines and caches nothing");

  Registry reg = fixture_registry();
  ArchiveCache primed(dir / "primed");
  MemoryTransport offline;
  fs::create_directories(primed.root());
  for (const auto& name : {"fixture-solver-src.tar.gz", "toybin-bin.tar.gz"}) {
    std::string bytes = read_file(kFixtures / "archives" / name);
    write_file(primed.path_for(sha256_hex(bytes)), bytes);
  }
  for (const auto& sp : reg.specs()) fetch(reg.at(sp).source, primed, offline);
  c.expect(offline.calls() == 0, "primed cache makes zero transport calls");

  ProvenanceManifest m;
  for (int i = 0; i < 6; ++i) {
    write_text(dir / std::to_string(i), std::to_string(i));
    m.entries.push_back(ManifestEntry{"s" + std::to_string(i % 3) + ":" + std::to_string(i), "https://x.invalid/" + std::to_string(i),
                                      i % 2 ? std::optional<std::string>("10.1/" + std::to_string(i)) : std::nullopt,
                                      sha256_file(dir / std::to_string(i)), "2020-01-31T12:00:00Z", dir / std::to_string(i),
                                      std::nullopt});
  }
  const std::string canonical = render_manifest(m);
  std::mt19937_64 rng(8);
  for (int k = 0; k < 50; ++k) {
    std::shuffle(m.entries.begin(), m.entries.end(), rng);
    c.expect(render_manifest(m) == canonical, "manifest depends on insertion order");
  }
}

void container_end_to_end(Check& c) {
  ContainerBackend probe;
  if (!probe.available()) {
    c.skipped = "no container runtime (docker or podman) on PATH";
    return;
  }
  Store s;
  s.prime_cache();
  auto env = s.env;
  env["SATHERITAGE_BACKEND"] = "container";
  CliResult r = run_cli({"build", "--offline", "toy:2000"}, env, 1800);
  c.expect(r.exit_code == 0, "container build of toy:2000: " + r.out + r.err);
  if (r.exit_code != 0) return;
  for (const auto& name : fixture_instances()) {
    CliResult viac = run_cli({"run", "--local-only", "toy:2000", instance(name).string()}, env, 300);
    CliResult viap = s.cli({"run", "toy:2000", instance(name).string()});
    c.expect(viac.exit_code == 10 || viac.exit_code == 20, "container run on " + name + " exits 10/20");
    c.expect(viac.exit_code == viap.exit_code, "container and process backends agree on " + name);
  }
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "interface fidelity (list, run, run-raw, info, build)", 30, interface_fidelity},
      {2, "recipe determinism and golden files", 5, recipe_determinism},
      {3, "DIMACS round trip, gzip and header modes", 20, dimacs_suite},
      {4, "oracle equivalence", 60, oracle_equivalence},
      {5, "proof checker soundness", 60, proof_soundness},
      {6, "normalization contract and liar detection", 10, normalization_contract},
      {7, "harness campaign", 90, harness_campaign},
      {8, "archive properties", 5, archive_properties},
      {9, "container end to end", 0, container_end_to_end},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget > 0 && secs > cr.budget) check.expect(false, "took longer than the budget");

    std::ostringstream timing;
    timing << std::fixed << std::setprecision(2) << secs << " s";
    if (cr.budget > 0) timing << " / " << cr.budget << " s";
    const char* verdict = check.failed ? "FAIL" : check.skipped ? "SKIP" : "PASS";
    std::cout << verdict << "  criterion " << cr.id << ": " << cr.title << " (" << timing.str() << ")";
    if (check.skipped && !check.failed) std::cout << ": " << *check.skipped;
    std::cout << "\n";
    for (const auto& f : check.failures) std::cout << "      " << f << "\n";
    if (check.failed > check.failures.size()) std::cout << "      ... " << check.failed - check.failures.size() << " more\n";
    failed += check.failed > 0;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed\n" : "all criteria passed\n");
  return failed ? 1 : 0;
}
