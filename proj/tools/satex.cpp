// satex: build and run archived SAT solvers through one interface.

#include <unistd.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "satex/satex.hpp"

namespace {

using namespace satex;

constexpr int kExitUsage = 2;

struct CliConfig {
  std::string registry;
  std::string backend;
  std::string store;
  std::string cache;
  unsigned jobs = 0;
  bool strict_dimacs = false;
  int verbosity = 0;
  std::string color = "auto";

  std::string registry_source = "default";
  std::string backend_source = "default";
};

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

std::string data_home(const char* xdg, const char* rel, const char* leaf) {
  std::string base = env_or(xdg, "");
  if (base.empty()) base = env_or("HOME", "/tmp") + "/" + rel;
  return base + "/satex/" + leaf;
}

/// Flags win over environment variables, which win over defaults.
void resolve_config(CliConfig& c) {
  if (!c.registry.empty()) c.registry_source = "flag";
  else if (const char* v = std::getenv("SATHERITAGE_REGISTRY"); v && *v) c.registry = v, c.registry_source = "env";
  else c.registry = "./registry";
  if (!c.backend.empty()) c.backend_source = "flag";
  else if (const char* v = std::getenv("SATHERITAGE_BACKEND"); v && *v) c.backend = v, c.backend_source = "env";
  else c.backend = "container";
  if (c.store.empty()) c.store = env_or("SATHERITAGE_STORE", data_home("XDG_DATA_HOME", ".local/share", "store"));
  if (c.cache.empty()) c.cache = env_or("SATHERITAGE_CACHE", data_home("XDG_CACHE_HOME", ".cache", "archive"));
  if (c.jobs == 0) c.jobs = std::max(1u, std::thread::hardware_concurrency());
}

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Context {
  CliConfig cfg;

  bool color_enabled(int fd) const {
    if (cfg.color == "always") return true;
    if (cfg.color == "never") return false;
    return ::isatty(fd) && env_or("NO_COLOR", "").empty();
  }

  std::string paint(const std::string& text, const char* code, int fd = 1) const {
    return color_enabled(fd) ? std::string("\033[") + code + "m" + text + "\033[0m" : text;
  }

  void log(const std::string& msg) const {
    if (cfg.verbosity > 0) std::cerr << "satex: " << msg << "\n";
  }

  Registry registry() const {
    log("loading registry " + cfg.registry);
    return load_registry(cfg.registry);
  }

  BackendKind backend_kind() const {
    auto k = backend_kind_from_string(cfg.backend);
    if (!k) throw UsageError("unknown backend '" + cfg.backend + "' (expected container or process)");
    return *k;
  }

  std::unique_ptr<ExecutionBackend> backend() const { return make_backend(backend_kind(), cfg.store); }

  /// Resolves a pattern that must name exactly one entry.
  SolverSpec single(const Registry& reg, const std::string& pattern) const {
    std::vector<SolverSpec> m = resolve(reg, pattern);
    if (m.size() != 1) {
      std::string msg = "'" + pattern + "' is ambiguous; candidates:";
      for (const auto& s : m) msg += "\n  " + s.str();
      throw UsageError(msg);
    }
    return m.front();
  }
};

// ---------------------------------------------------------------------------

int cmd_list(Context& ctx, const std::string& pattern) {
  Registry reg = ctx.registry();
  std::vector<SolverSpec> specs;
  try {
    specs = resolve(reg, pattern);
  } catch (const RegistryError& e) {
    if (e.kind() != RegistryError::Kind::NoMatch) throw;
    ctx.log(e.what());
    return 1;
  }
  for (const auto& s : specs) std::cout << s.str() << "\n";
  return 0;
}

int cmd_info(Context& ctx, const std::string& pattern, bool as_json) {
  Registry reg = ctx.registry();
  InfoReport r = info(reg, ctx.single(reg, pattern));
  if (as_json) std::cout << to_ordered_json(r).dump(2) << "\n";
  else std::cout << render_info(r);
  return 0;
}

void copy_stream(const fs::path& from, std::ostream& to) {
  std::ifstream in(from, std::ios::binary);
  // An empty buffer would set failbit on `to` and mute it from then on.
  if (in.peek() != std::char_traits<char>::eof()) to << in.rdbuf();
  to.flush();
}

struct RunArgs {
  std::string spec;
  std::string input;
  std::string proof;
  double timeout = 0;
  std::uint64_t memory = 0;
  unsigned cpus = 0;
  bool no_verify = false;
  bool check_proof = false;
  bool keep = false;
  bool local_only = false;
};

int cmd_run(Context& ctx, const RunArgs& a) {
  Registry reg = ctx.registry();
  const SolverSpec spec = ctx.single(reg, a.spec);
  const SolverEntry& entry = reg.at(spec);
  auto backend = ctx.backend();

  ResourceLimits limits;
  if (a.timeout > 0) limits.wall_timeout = a.timeout;
  if (a.memory > 0) limits.memory_limit = a.memory;
  if (a.cpus > 0) limits.cpu_count = a.cpus;

  std::optional<fs::path> proof_out;
  if (!a.proof.empty()) {
    proof_out = fs::absolute(a.proof);
    if (!entry.run.proof_capable) std::cerr << "satex: warning: " << spec.str() << " cannot produce proofs; ignoring " << a.proof << "\n";
    if (!entry.run.proof_capable) proof_out.reset();
  }

  ArchiveCache cache(ctx.cfg.cache);
  ImageRef image = fetch_or_build(*backend, reg, spec, a.local_only ? FetchPolicy::LocalOnly : FetchPolicy::PreferRemote, &cache);
  ctx.log("running " + image.tag + " (" + image.id + ")");
  const fs::path dir = make_temp_dir("satex-run");
  RunOutcome outcome = run_solver(*backend, image, a.input, proof_out, limits, RunFiles::in(dir));
  copy_stream(outcome.stdout_path, std::cout);
  copy_stream(outcome.stderr_path, std::cerr);

  std::optional<cnf::Formula> formula;
  if (!a.no_verify || a.check_proof) {
    try {
      std::vector<cnf::DimacsWarning> warnings;
      formula = cnf::parse_dimacs_file(a.input, {ctx.cfg.strict_dimacs}, &warnings);
      for (const auto& w : warnings) ctx.log(a.input + ":" + std::to_string(w.line) + ": " + w.message);
    } catch (const std::exception& e) {
      std::cerr << "satex: warning: cannot verify result: " << e.what() << "\n";
    }
  }
  Assessment as = assess_run(outcome, formula ? &*formula : nullptr, {!a.no_verify, a.check_proof});
  if (as.error) std::cerr << "satex: " << *as.error << "\n";
  if (as.verification && *as.verification != cnf::Evaluation::Satisfied)
    std::cerr << "satex: model check failed (" << cnf::to_string(*as.verification) << "); reporting " << to_string(as.normalized.status)
              << "\n";
  if (as.proof) std::cerr << "satex: proof " << proof::describe(*as.proof) << "\n";
  ctx.log("status " + std::string(to_string(as.normalized.status)) + ", raw exit " + std::to_string(outcome.raw_exit_code) +
          ", wall " + std::to_string(outcome.wall_time) + " s");
  if (a.keep) std::cerr << "satex: run files kept in " << dir.string() << "\n";
  else fs::remove_all(dir);
  return as.normalized.exit_code;
}

int cmd_run_raw(Context& ctx, const std::string& pattern, const std::vector<std::string>& args) {
  Registry reg = ctx.registry();
  const SolverSpec spec = ctx.single(reg, pattern);
  auto backend = ctx.backend();
  ImageRef image = fetch_or_build(*backend, reg, spec, FetchPolicy::PreferRemote);
  std::cout.flush();
  return backend->run_raw(image, executable_name(reg.at(spec).run), args);
}

int cmd_build(Context& ctx, const std::string& pattern, bool offline) {
  Registry reg = ctx.registry();
  std::vector<SolverSpec> specs = resolve(reg, pattern);
  auto backend = ctx.backend();
  if (!backend->can_build())
    throw UsageError(std::string(to_string(backend->kind())) + " backend cannot build images; use --backend container");

  struct Result {
    bool ok = false;
    std::string detail;
    std::string log;
  };
  const ArchiveCache cache(ctx.cfg.cache);
  std::vector<Result> results(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < specs.size();) {
      try {
        ImageRef img = build_image(*backend, offline ? cached_build_recipe(reg, specs[i], cache) : generate_build_recipe(reg, specs[i]));
        results[i] = {true, img.id, {}};
      } catch (const RuntimeError& e) {
        results[i] = {false, e.what(), e.log()};
      } catch (const std::exception& e) {
        results[i] = {false, e.what(), {}};
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < std::min<std::size_t>(ctx.cfg.jobs, specs.size()); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::size_t failed = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& r = results[i];
    if (r.ok) std::cout << ctx.paint("ok", "32") << "      " << image_name(specs[i]) << "  " << r.detail << "\n";
    else {
      ++failed;
      std::cout << ctx.paint("FAILED", "31") << "  " << image_name(specs[i]) << "  " << r.detail << "\n";
      if (ctx.cfg.verbosity > 0 && !r.log.empty()) std::cerr << r.log << "\n";
    }
  }
  std::cout << specs.size() - failed << " built, " << failed << " failed\n";
  return failed == 0 ? 0 : 1;
}

int cmd_recipe(Context& ctx, const std::string& pattern, bool wrapper, const std::string& out_dir) {
  Registry reg = ctx.registry();
  const SolverSpec spec = ctx.single(reg, pattern);
  BuildRecipe r = generate_build_recipe(reg, spec);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "Dockerfile", r.text);
    for (const auto& [name, content] : r.context_files) {
      write_file(fs::path(out_dir) / name, content);
      fs::permissions(fs::path(out_dir) / name, fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec,
                      fs::perm_options::add);
    }
    std::cout << (fs::path(out_dir) / "Dockerfile").string() << "\n";
    return 0;
  }
  std::cout << (wrapper ? r.context_files.at(std::string(kWrapperName)) : r.text);
  return 0;
}

int cmd_extract(Context& ctx, const std::string& pattern, const std::string& dest) {
  Registry reg = ctx.registry();
  const SolverSpec spec = ctx.single(reg, pattern);
  auto backend = ctx.backend();
  ExtractResult r = extract_binary(*backend, reg, spec, dest, FetchPolicy::PreferRemote);
  for (const auto& f : r.files) std::cout << f.string() << "\n";
  std::cout << r.provenance.string() << "\n";
  return 0;
}

int cmd_install(Context& ctx, const std::string& pattern, const std::string& executable) {
  Registry reg = ctx.registry();
  const SolverSpec spec = ctx.single(reg, pattern);
  ProcessBackend backend(ctx.cfg.store);
  ImageRef img = backend.install(reg.at(spec), executable);
  std::cout << img.location.string() << "\n";
  return 0;
}

int cmd_bench(Context& ctx, const std::string& matrix_file, bool csv, const std::string& results_override, bool jobs_given) {
  Registry reg = ctx.registry();
  MatrixFile m = load_matrix(matrix_file, reg);
  if (jobs_given) m.matrix.parallelism = ctx.cfg.jobs;
  if (!results_override.empty()) m.paths.results = results_override;
  auto backend = ctx.backend();
  ctx.log("campaign: " + std::to_string(m.matrix.solvers.size()) + " solvers x " + std::to_string(m.matrix.instances.size()) +
          " instances, parallelism " + std::to_string(m.matrix.parallelism));
  ResultTable table = run_matrix(reg, m.matrix, *backend, m.paths);
  auto summary = summarize(table);
  std::cout << (csv ? render_summary_csv(summary) : render_summary_text(summary));
  auto dis = detect_disagreements(table);
  for (const auto& d : dis) {
    std::cerr << "satex: disagreement on " << d.instance << ":";
    for (const auto& r : d.rows) std::cerr << " " << r.solver << "=" << to_string(r.claimed);
    std::cerr << "\n";
  }
  std::cerr << "satex: results written to " << m.paths.results.string() << "\n";
  return dis.empty() ? 0 : 1;
}

int cmd_fetch(Context& ctx, const std::string& pattern, const std::string& manifest_path) {
  Registry reg = ctx.registry();
  std::vector<SolverSpec> specs = resolve(reg, pattern);
  ArchiveCache cache(ctx.cfg.cache);
  HttpTransport transport;
  ProvenanceManifest manifest;
  std::size_t failed = 0;
  for (const auto& spec : specs) {
    const SolverEntry& e = reg.at(spec);
    try {
      fs::path p = fetch(e.source, cache, transport);
      std::optional<std::string> digest;
      try {
        digest = recipe_inputs_digest(e, era_for(reg, spec));
      } catch (const RegistryError&) {
      }
      manifest.entries.push_back(manifest_entry(e, p, digest));
      std::cout << ctx.paint("ok", "32") << "      " << spec.str() << "  " << p.string() << "\n";
    } catch (const ArchiveError& err) {
      ++failed;
      std::cout << ctx.paint("FAILED", "31") << "  " << spec.str() << "  " << err.what() << "\n";
    }
  }
  if (!manifest_path.empty()) {
    write_manifest(manifest, manifest_path);
    std::cerr << "satex: manifest written to " << manifest_path << "\n";
  }
  return failed == 0 ? 0 : 1;
}

int cmd_check_proof(Context& ctx, const std::string& cnf_path, const std::string& proof_path, bool ignore_deletions) {
  std::vector<cnf::DimacsWarning> warnings;
  cnf::Formula f = cnf::parse_dimacs_file(cnf_path, {ctx.cfg.strict_dimacs}, &warnings);
  for (const auto& w : warnings) std::cerr << "satex: warning: " << cnf_path << ":" << w.line << ": " << w.message << "\n";
  proof::ProofLog log = proof::parse_drup(read_file(proof_path));
  proof::ProofVerdict v = proof::check_proof(f, log, {ignore_deletions});
  std::cout << proof::describe(v) << "\n";
  if (!v.unmatched_deletions.empty() && ctx.cfg.verbosity > 0)
    for (auto step : v.unmatched_deletions) std::cerr << "satex: warning: deletion at step " << step << " matched no clause\n";
  return v.kind == proof::VerdictKind::Verified ? 0 : 1;
}

int cmd_config(const Context& ctx) {
  const auto& c = ctx.cfg;
  std::cout << "registry = " << c.registry << "  (" << c.registry_source << ")\n";
  std::cout << "backend = " << c.backend << "  (" << c.backend_source << ")\n";
  std::cout << "store = " << c.store << "\n";
  std::cout << "cache = " << c.cache << "\n";
  std::cout << "tmpdir = " << temp_root().string() << "\n";
  std::cout << "jobs = " << c.jobs << "\n";
  std::cout << "strict_dimacs = " << (c.strict_dimacs ? "true" : "false") << "\n";
  std::cout << "verbosity = " << c.verbosity << "\n";
  std::cout << "color = " << c.color << "\n";
  if (c.backend == "container") std::cout << "container_cli = " << ContainerBackend().cli() << "\n";
  return 0;
}

void on_signal(int) { request_interrupt(); }

}  // namespace

int main(int argc, char** argv) {
  // Everything after the first `--` belongs to run-raw, untouched.
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> raw_args;
  bool saw_separator = false;
  if (auto it = std::find(args.begin(), args.end(), "--"); it != args.end()) {
    saw_separator = true;
    raw_args.assign(it + 1, args.end());
    args.erase(it, args.end());
  }
  std::reverse(args.begin(), args.end());  // CLI11 consumes vectors from the back

  Context ctx;
  CLI::App app{"satex: build and run archived SAT solvers through one interface"};
  app.name("satex");
  app.require_subcommand(1);
  app.add_option("--registry", ctx.cfg.registry, "Registry directory (env SATHERITAGE_REGISTRY, default ./registry)");
  app.add_option("--backend", ctx.cfg.backend, "Execution backend: container or process (env SATHERITAGE_BACKEND)")
      ->check(CLI::IsMember({"container", "process"}));
  app.add_option("--store", ctx.cfg.store, "Process backend solver store (env SATHERITAGE_STORE)");
  app.add_option("--cache", ctx.cfg.cache, "Download cache directory (env SATHERITAGE_CACHE)");
  auto* jobs_opt = app.add_option("-j,--jobs", ctx.cfg.jobs, "Concurrent builds/runs")->check(CLI::PositiveNumber);
  app.add_flag("--strict-dimacs", ctx.cfg.strict_dimacs, "Treat DIMACS header mismatches as errors");
  app.add_flag("-v,--verbose", ctx.cfg.verbosity, "Diagnostics on standard error (repeatable)");
  app.add_option("--color", ctx.cfg.color, "Colored output: auto, always or never")->check(CLI::IsMember({"auto", "always", "never"}));

  std::string pattern = "*";
  auto* list = app.add_subcommand("list", "List registered solvers matching NAMEGLOB[:VERSIONGLOB]");
  list->add_option("pattern", pattern, "Glob pattern (default *)");

  std::string spec_arg;
  bool as_json = false;
  auto* info_cmd = app.add_subcommand("info", "Show metadata, era and run commands of a solver");
  info_cmd->add_option("spec", spec_arg, "Solver NAME:VERSION")->required();
  info_cmd->add_flag("--json", as_json, "Machine-readable output");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run a solver on a DIMACS file; exit 10 SAT, 20 UNSAT, 0 UNKNOWN, 1 otherwise");
  run->add_option("spec", run_args.spec, "Solver NAME:VERSION")->required();
  run->add_option("cnf", run_args.input, "DIMACS CNF file, optionally gzipped")->required();
  run->add_option("proof", run_args.proof, "Proof output file (DRUP)");
  run->add_option("--timeout", run_args.timeout, "Wall-clock limit in seconds")->check(CLI::PositiveNumber);
  run->add_option("--memory", run_args.memory, "Memory limit in bytes");
  run->add_option("--cpus", run_args.cpus, "Number of CPUs")->check(CLI::PositiveNumber);
  run->add_flag("--no-verify", run_args.no_verify, "Do not check SAT models against the formula");
  run->add_flag("--check-proof", run_args.check_proof, "Check the produced proof (DRUP)");
  run->add_flag("--keep", run_args.keep, "Keep the run directory with captured output");
  run->add_flag("--local-only", run_args.local_only, "Never pull images; build only from cached sources");

  auto* run_raw = app.add_subcommand("run-raw", "Run the solver executable with verbatim arguments: run-raw SPEC -- ARGS...");
  run_raw->add_option("spec", spec_arg, "Solver NAME:VERSION")->required();

  auto* build = app.add_subcommand("build", "Build images for every solver matching a pattern");
  bool offline = false;
  build->add_option("pattern", pattern, "Glob pattern, e.g. '*:2000'")->required();
  build->add_flag("--offline", offline, "Take sources from the download cache instead of the network");

  bool wrapper_only = false;
  std::string out_dir;
  auto* recipe = app.add_subcommand("recipe", "Print the build recipe (or wrapper) of a solver");
  recipe->add_option("spec", spec_arg, "Solver NAME:VERSION")->required();
  recipe->add_flag("--wrapper", wrapper_only, "Print the run wrapper instead");
  recipe->add_option("--output-dir", out_dir, "Write Dockerfile and build context files to a directory");

  std::string dest;
  auto* extract = app.add_subcommand("extract", "Copy the solver binary and wrapper out of its image");
  extract->add_option("spec", spec_arg, "Solver NAME:VERSION")->required();
  extract->add_option("dest", dest, "Destination directory")->required();

  std::string exe_path;
  auto* install = app.add_subcommand("install", "Put a pre-built executable into the process backend store");
  install->add_option("spec", spec_arg, "Solver NAME:VERSION")->required();
  install->add_option("executable", exe_path, "Executable file")->required()->check(CLI::ExistingFile);

  std::string matrix_file, results_override;
  bool csv = false;
  auto* bench = app.add_subcommand("bench", "Run a solver x instance campaign described by a JSON file");
  bench->add_option("matrix", matrix_file, "Campaign file")->required()->check(CLI::ExistingFile);
  bench->add_flag("--csv", csv, "Summary as CSV");
  bench->add_option("--results", results_override, "Results file (overrides the campaign file)");

  std::string manifest_path;
  auto* fetch_cmd = app.add_subcommand("fetch", "Download and verify solver sources into the cache");
  fetch_cmd->add_option("pattern", pattern, "Glob pattern")->required();
  fetch_cmd->add_option("--manifest", manifest_path, "Write a provenance manifest");

  std::string cnf_path, proof_path;
  bool ignore_deletions = false;
  auto* check = app.add_subcommand("check-proof", "Check a DRUP proof of unsatisfiability");
  check->add_option("cnf", cnf_path, "DIMACS CNF file")->required()->check(CLI::ExistingFile);
  check->add_option("proof", proof_path, "DRUP proof file")->required()->check(CLI::ExistingFile);
  check->add_flag("--ignore-deletions", ignore_deletions, "Skip deletion steps");

  auto* config = app.add_subcommand("config", "Print the resolved configuration");

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (saw_separator && !run_raw->parsed()) {
    std::cerr << "satex: unexpected arguments after '--'\n";
    return kExitUsage;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGHUP, on_signal);

  try {
    resolve_config(ctx.cfg);
    if (list->parsed()) return cmd_list(ctx, pattern);
    if (info_cmd->parsed()) return cmd_info(ctx, spec_arg, as_json);
    if (run->parsed()) return cmd_run(ctx, run_args);
    if (run_raw->parsed()) {
      if (!saw_separator) {
        std::cerr << "satex: run-raw needs '--' before the solver arguments\n" << run_raw->help();
        return kExitUsage;
      }
      return cmd_run_raw(ctx, spec_arg, raw_args);
    }
    if (build->parsed()) return cmd_build(ctx, pattern, offline);
    if (recipe->parsed()) return cmd_recipe(ctx, spec_arg, wrapper_only, out_dir);
    if (extract->parsed()) return cmd_extract(ctx, spec_arg, dest);
    if (install->parsed()) return cmd_install(ctx, spec_arg, exe_path);
    if (bench->parsed()) return cmd_bench(ctx, matrix_file, csv, results_override, jobs_opt->count() > 0);
    if (fetch_cmd->parsed()) return cmd_fetch(ctx, pattern, manifest_path);
    if (check->parsed()) return cmd_check_proof(ctx, cnf_path, proof_path, ignore_deletions);
    if (config->parsed()) return cmd_config(ctx);
  } catch (const UsageError& e) {
    std::cerr << "satex: " << e.what() << "\n";
    return kExitUsage;
  } catch (const RegistryError& e) {
    std::cerr << "satex: " << e.what() << "\n";
    return kExitUsage;
  } catch (const RuntimeError& e) {
    std::cerr << "satex: " << e.what() << "\n";
    if (!e.log().empty()) std::cerr << e.log() << "\n";
    return e.kind() == RuntimeError::Kind::NothingToExtract || e.kind() == RuntimeError::Kind::BuildFailed ? 1 : kExitUsage;
  } catch (const HarnessError& e) {
    std::cerr << "satex: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cnf::DimacsError& e) {
    std::cerr << "satex: " << e.what() << "\n";
    return kExitUsage;
  } catch (const proof::ProofParseError& e) {
    std::cerr << "satex: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "satex: error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
