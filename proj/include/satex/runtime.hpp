#pragma once

// Execution backends. The container backend drives a Docker-compatible CLI;
// the process backend runs solvers installed in a local store directory laid
// out as <store>/<name>/<version>/{<executable>, satex-wrapper}, which is the
// same layout `extract` produces.

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "satex/archive.hpp"
#include "satex/cnf.hpp"
#include "satex/process.hpp"
#include "satex/recipes.hpp"
#include "satex/registry.hpp"

namespace satex {

class RuntimeError : public std::runtime_error {
 public:
  enum class Kind { BackendUnavailable, BuildFailed, ImageUnavailable, InputMissing, SpawnFailure, NothingToExtract, DestinationUnwritable };

  RuntimeError(Kind kind, const std::string& what, std::string log = {})
      : std::runtime_error(what), kind_(kind), log_(std::move(log)) {}

  Kind kind() const { return kind_; }
  /// Captured build output for BuildFailed.
  const std::string& log() const { return log_; }

 private:
  Kind kind_;
  std::string log_;
};

enum class BackendKind { Container, Process };

inline std::string_view to_string(BackendKind k) { return k == BackendKind::Container ? "container" : "process"; }

inline std::optional<BackendKind> backend_kind_from_string(std::string_view s) {
  if (s == "container") return BackendKind::Container;
  if (s == "process") return BackendKind::Process;
  return std::nullopt;
}

struct ResourceLimits {
  /// Seconds; must be positive. Infinity disables the deadline.
  double wall_timeout = std::numeric_limits<double>::infinity();
  std::optional<std::uint64_t> memory_limit;
  std::optional<unsigned> cpu_count;

  void validate() const {
    if (!(wall_timeout > 0)) throw std::invalid_argument("wall_timeout must be positive");
    if (cpu_count && *cpu_count == 0) throw std::invalid_argument("cpu_count must be positive");
  }
};

struct ImageRef {
  std::string tag;
  /// Content-addressed identifier (`sha256:...`).
  std::string id;
  /// Process backend: directory holding the executable and wrapper, or a
  /// bare executable run without a wrapper.
  fs::path location;
};

struct RunOutcome {
  Status status = Status::Unknown;
  int raw_exit_code = 0;
  double wall_time = 0.0;
  fs::path stdout_path;
  fs::path stderr_path;
  std::optional<fs::path> proof_path;
};

/// Where stdout/stderr of one run go. Each run should own its directory.
struct RunFiles {
  fs::path stdout_path;
  fs::path stderr_path;

  static RunFiles in(const fs::path& dir) { return {dir / "stdout.txt", dir / "stderr.txt"}; }
};

/// Root for temporary files: SATHERITAGE_TMPDIR, else the system default.
inline fs::path temp_root() {
  if (const char* t = std::getenv("SATHERITAGE_TMPDIR"); t && *t) {
    fs::create_directories(t);
    return t;
  }
  return fs::temp_directory_path();
}

inline fs::path make_temp_dir(std::string_view prefix = "satex") {
  std::string templ = (temp_root() / (std::string(prefix) + "-XXXXXX")).string();
  if (!::mkdtemp(templ.data())) throw std::runtime_error("cannot create temporary directory under " + temp_root().string());
  return templ;
}

class ExecutionBackend {
 public:
  virtual ~ExecutionBackend() = default;

  virtual BackendKind kind() const = 0;
  virtual bool can_build() const = 0;
  virtual bool can_extract() const = 0;

  /// An image already usable without network or build.
  virtual std::optional<ImageRef> find_local(const SolverEntry& entry) = 0;
  /// Fetches a published image; nothing when unavailable.
  virtual std::optional<ImageRef> pull(const SolverEntry& entry) = 0;
  virtual ImageRef build(const BuildRecipe& recipe) = 0;
  /// Invokes the unified wrapper of `image`.
  virtual RunOutcome run(const ImageRef& image, const fs::path& input, const std::optional<fs::path>& proof_out,
                         const ResourceLimits& limits, const RunFiles& files) = 0;
  /// Invokes the solver executable directly with the caller's stdio.
  virtual int run_raw(const ImageRef& image, const std::string& executable, const std::vector<std::string>& args) = 0;
  /// Copies the executable and wrapper into `dest`; returns the copied paths.
  virtual std::vector<fs::path> extract(const ImageRef& image, const std::string& executable, const fs::path& dest) = 0;
  /// Recipe digest recorded with the image, when known.
  virtual std::optional<std::string> inputs_digest(const ImageRef& image) = 0;
};

namespace detail {

/// Memory exhaustion is only inferred when a limit was requested.
inline bool looks_like_memout(const SpawnResult& r, const ResourceLimits& limits, const fs::path& stderr_path) {
  if (!limits.memory_limit || r.timed_out) return false;
  if (r.signaled) return true;
  if (r.exit_code == 0 || r.exit_code == 10 || r.exit_code == 20) return false;
  std::ifstream in(stderr_path);
  std::string line;
  while (std::getline(in, line))
    if (line.find("bad_alloc") != std::string::npos || line.find("out of memory") != std::string::npos ||
        line.find("Cannot allocate memory") != std::string::npos)
      return true;
  return false;
}

inline RunOutcome outcome_from(const SpawnResult& r, const ResourceLimits& limits, const RunFiles& files,
                               const std::optional<fs::path>& proof_out) {
  RunOutcome o;
  o.raw_exit_code = r.exit_code;
  o.wall_time = r.wall_time;
  o.stdout_path = files.stdout_path;
  o.stderr_path = files.stderr_path;
  o.proof_path = proof_out;
  if (r.timed_out) o.status = Status::Timeout;
  else if (looks_like_memout(r, limits, files.stderr_path)) o.status = Status::MemOut;
  else if (r.signaled || (r.exit_code != kExitSat && r.exit_code != kExitUnsat && r.exit_code != kExitUnknown))
    o.status = Status::CrashOrError;
  return o;
}

inline void check_run_preconditions(const fs::path& input, const std::optional<fs::path>& proof_out) {
  std::error_code ec;
  if (!fs::is_regular_file(input, ec)) throw RuntimeError(RuntimeError::Kind::InputMissing, "input file not found: " + input.string());
  if (proof_out) {
    fs::path parent = fs::absolute(*proof_out).parent_path();
    if (!fs::is_directory(parent, ec) || ::access(parent.c_str(), W_OK) != 0)
      throw RuntimeError(RuntimeError::Kind::InputMissing, "proof directory not writable: " + parent.string());
  }
}

inline void check_destination(const fs::path& dest) {
  std::error_code ec;
  fs::create_directories(dest, ec);
  if (!fs::is_directory(dest) || ::access(dest.c_str(), W_OK) != 0)
    throw RuntimeError(RuntimeError::Kind::DestinationUnwritable, "destination not writable: " + dest.string());
}

inline void write_if_changed(const fs::path& path, const std::string& content, fs::perms perms) {
  std::error_code ec;
  if (!fs::exists(path, ec) || read_file(path) != content) write_file(path, content);
  fs::permissions(path, perms, ec);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Process backend

class ProcessBackend final : public ExecutionBackend {
 public:
  explicit ProcessBackend(fs::path store) : store_(std::move(store)) {}

  BackendKind kind() const override { return BackendKind::Process; }
  bool can_build() const override { return false; }
  bool can_extract() const override { return true; }

  const fs::path& store() const { return store_; }

  fs::path image_dir(const SolverSpec& spec) const { return store_ / spec.name / spec.version; }

  /// Places a pre-built executable in the store together with its wrapper.
  ImageRef install(const SolverEntry& entry, const fs::path& executable) {
    fs::path dir = image_dir(entry.spec);
    fs::create_directories(dir);
    fs::path dest = dir / executable_name(entry.run);
    fs::copy_file(executable, dest, fs::copy_options::overwrite_existing);
    fs::permissions(dest, fs::perms::owner_all | fs::perms::group_read | fs::perms::group_exec | fs::perms::others_read |
                              fs::perms::others_exec);
    return *find_local(entry);
  }

  std::optional<ImageRef> find_local(const SolverEntry& entry) override {
    fs::path dir = image_dir(entry.spec);
    fs::path exe = dir / executable_name(entry.run);
    std::error_code ec;
    if (!fs::is_regular_file(exe, ec)) return std::nullopt;
    const auto exec_perms = fs::perms::owner_all | fs::perms::group_read | fs::perms::group_exec | fs::perms::others_read |
                            fs::perms::others_exec;
    detail::write_if_changed(dir / kWrapperName, generate_run_wrapper(entry), exec_perms);
    Sha256 h;
    h.update(sha256_file(exe)).update(sha256_file(dir / kWrapperName));
    return ImageRef{image_name(entry.spec), "sha256:" + h.hex(), dir};
  }

  std::optional<ImageRef> pull(const SolverEntry&) override { return std::nullopt; }

  ImageRef build(const BuildRecipe& recipe) override {
    throw RuntimeError(RuntimeError::Kind::BackendUnavailable,
                       "process backend cannot build images (can_build=false); requested " + image_name(recipe.spec));
  }

  RunOutcome run(const ImageRef& image, const fs::path& input, const std::optional<fs::path>& proof_out,
                 const ResourceLimits& limits, const RunFiles& files) override {
    limits.validate();
    detail::check_run_preconditions(input, proof_out);
    // A store directory runs through its wrapper; a bare executable is run
    // directly with the same arguments.
    std::error_code ec;
    const bool bare = fs::is_regular_file(image.location, ec);
    const fs::path dir = bare ? image.location.parent_path() : image.location;
    SpawnRequest req;
    req.argv = {(bare ? image.location : image.location / kWrapperName).string(), fs::absolute(input).string()};
    if (proof_out) req.argv.push_back(fs::absolute(*proof_out).string());
    req.stdout_path = files.stdout_path;
    req.stderr_path = files.stderr_path;
    req.env["PATH"] = dir.string() + ":" + path_env();
    req.env["TMPDIR"] = files.stdout_path.parent_path().string();
    req.timeout = limits.wall_timeout;
    req.memory_limit = limits.memory_limit;
    req.cpu_count = limits.cpu_count;
    SpawnResult r;
    try {
      r = spawn_and_wait(req);
    } catch (const SpawnError& e) {
      throw RuntimeError(RuntimeError::Kind::SpawnFailure, e.what());
    }
    return detail::outcome_from(r, limits, files, proof_out);
  }

  int run_raw(const ImageRef& image, const std::string& executable, const std::vector<std::string>& args) override {
    SpawnRequest req;
    req.argv = {(image.location / executable).string()};
    req.argv.insert(req.argv.end(), args.begin(), args.end());
    req.inherit_stdin = true;
    try {
      return spawn_and_wait(req).exit_code;
    } catch (const SpawnError& e) {
      throw RuntimeError(RuntimeError::Kind::SpawnFailure, e.what());
    }
  }

  std::vector<fs::path> extract(const ImageRef& image, const std::string& executable, const fs::path& dest) override {
    std::vector<fs::path> out;
    for (const std::string& name : {executable, std::string(kWrapperName)}) {
      fs::path src = image.location / name;
      if (!fs::is_regular_file(src)) throw RuntimeError(RuntimeError::Kind::NothingToExtract, "missing " + src.string());
      fs::copy_file(src, dest / name, fs::copy_options::overwrite_existing);
      out.push_back(dest / name);
    }
    return out;
  }

  std::optional<std::string> inputs_digest(const ImageRef&) override { return std::nullopt; }

 private:
  static std::string path_env() {
    const char* p = std::getenv("PATH");
    return p ? p : "/usr/bin:/bin";
  }

  fs::path store_;
};

// ---------------------------------------------------------------------------
// Container backend

class ContainerBackend final : public ExecutionBackend {
 public:
  /// `cli` defaults to SATHERITAGE_CONTAINER_CLI, then docker, then podman.
  explicit ContainerBackend(std::string cli = {}) : cli_(std::move(cli)) {
    if (cli_.empty()) {
      if (const char* c = std::getenv("SATHERITAGE_CONTAINER_CLI"); c && *c) cli_ = c;
      else if (!which("docker").empty()) cli_ = "docker";
      else if (!which("podman").empty()) cli_ = "podman";
      else cli_ = "docker";
    }
  }

  BackendKind kind() const override { return BackendKind::Container; }
  bool can_build() const override { return true; }
  bool can_extract() const override { return true; }

  bool available() const { return !which(cli_).empty(); }
  const std::string& cli() const { return cli_; }

  std::optional<ImageRef> find_local(const SolverEntry& entry) override { return inspect(image_name(entry.spec)); }

  std::optional<ImageRef> pull(const SolverEntry& entry) override {
    require();
    std::string out, err;
    if (capture_command({cli_, "pull", image_name(entry.spec)}, out, &err) != 0) return std::nullopt;
    return inspect(image_name(entry.spec));
  }

  ImageRef build(const BuildRecipe& recipe) override {
    require();
    const std::string tag = image_name(recipe.spec);
    std::lock_guard<std::mutex> lock(tag_mutex(tag));
    fs::path ctx = make_temp_dir("satex-build");
    for (const auto& [name, content] : recipe.context_files) {
      write_file(ctx / name, content);
      fs::permissions(ctx / name, fs::perms::owner_all | fs::perms::group_read | fs::perms::group_exec |
                                      fs::perms::others_read | fs::perms::others_exec);
    }
    write_file(ctx / "Dockerfile", recipe.text);
    std::string out, err;
    int rc = capture_command({cli_, "build", "--tag", tag, "--file", (ctx / "Dockerfile").string(), ctx.string()}, out, &err);
    std::error_code ec;
    fs::remove_all(ctx, ec);
    if (rc != 0) throw RuntimeError(RuntimeError::Kind::BuildFailed, "build of " + tag + " failed", out + err);
    auto ref = inspect(tag);
    if (!ref) throw RuntimeError(RuntimeError::Kind::BuildFailed, "built image " + tag + " not found afterwards", out + err);
    return *ref;
  }

  RunOutcome run(const ImageRef& image, const fs::path& input, const std::optional<fs::path>& proof_out,
                 const ResourceLimits& limits, const RunFiles& files) override {
    require();
    limits.validate();
    detail::check_run_preconditions(input, proof_out);
    static std::atomic<unsigned> counter{0};
    const std::string name = "satex-run-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
    const fs::path in_abs = fs::absolute(input);
    const std::string in_target = "/satex/in/" + in_abs.filename().string();

    SpawnRequest req;
    req.argv = {cli_, "run", "--rm", "--name", name, "--network", "none",
                "--user", std::to_string(::getuid()) + ":" + std::to_string(::getgid()),
                "--mount", "type=bind,source=" + in_abs.string() + ",target=" + in_target + ",readonly"};
    std::string proof_target;
    if (proof_out) {
      fs::path p = fs::absolute(*proof_out);
      req.argv.push_back("--mount");
      req.argv.push_back("type=bind,source=" + p.parent_path().string() + ",target=/satex/out");
      proof_target = "/satex/out/" + p.filename().string();
    }
    if (limits.memory_limit) {
      req.argv.push_back("--memory");
      req.argv.push_back(std::to_string(*limits.memory_limit));
    }
    if (limits.cpu_count) {
      req.argv.push_back("--cpus");
      req.argv.push_back(std::to_string(*limits.cpu_count));
    }
    req.argv.push_back(image.tag);
    req.argv.push_back(in_target);
    if (proof_out) req.argv.push_back(proof_target);
    req.stdout_path = files.stdout_path;
    req.stderr_path = files.stderr_path;
    req.timeout = limits.wall_timeout;
    const std::string cli = cli_;
    req.on_timeout = [cli, name] {
      std::string ignored;
      capture_command({cli, "kill", name}, ignored);
    };
    SpawnResult r;
    try {
      r = spawn_and_wait(req);
    } catch (const SpawnError& e) {
      throw RuntimeError(RuntimeError::Kind::SpawnFailure, e.what());
    }
    // docker reports out-of-memory kills as 137
    if (limits.memory_limit && !r.timed_out && r.exit_code == 137) r.signaled = true;
    return detail::outcome_from(r, limits, files, proof_out);
  }

  int run_raw(const ImageRef& image, const std::string& executable, const std::vector<std::string>& args) override {
    require();
    SpawnRequest req;
    req.argv = {cli_, "run", "--rm", "-i", "--entrypoint", std::string(kInstallDir) + "/" + executable, image.tag};
    req.argv.insert(req.argv.end(), args.begin(), args.end());
    req.inherit_stdin = true;
    try {
      return spawn_and_wait(req).exit_code;
    } catch (const SpawnError& e) {
      throw RuntimeError(RuntimeError::Kind::SpawnFailure, e.what());
    }
  }

  std::vector<fs::path> extract(const ImageRef& image, const std::string& executable, const fs::path& dest) override {
    require();
    std::string id, err;
    if (capture_command({cli_, "create", image.tag}, id, &err) != 0)
      throw RuntimeError(RuntimeError::Kind::ImageUnavailable, "cannot create container from " + image.tag + ": " + err);
    while (!id.empty() && (id.back() == '\n' || id.back() == '\r')) id.pop_back();
    std::vector<fs::path> out;
    std::string failure;
    for (const std::string& name : {executable, std::string(kWrapperName)}) {
      std::string o, e;
      if (capture_command({cli_, "cp", id + ":" + std::string(kInstallDir) + "/" + name, (dest / name).string()}, o, &e) != 0) {
        failure = name + ": " + e;
        break;
      }
      out.push_back(dest / name);
    }
    std::string ignored;
    capture_command({cli_, "rm", id}, ignored);
    if (!failure.empty()) throw RuntimeError(RuntimeError::Kind::NothingToExtract, "cannot copy " + failure);
    return out;
  }

  std::optional<std::string> inputs_digest(const ImageRef& image) override {
    std::string out;
    const std::string fmt = "{{index .Config.Labels \"" + std::string(kDigestLabel) + "\"}}";
    if (capture_command({cli_, "image", "inspect", "--format", fmt, image.tag}, out) != 0) return std::nullopt;
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    if (out.empty() || out == "<no value>") return std::nullopt;
    return out;
  }

 private:
  void require() const {
    if (!available())
      throw RuntimeError(RuntimeError::Kind::BackendUnavailable, "container runtime '" + cli_ + "' not found");
  }

  std::optional<ImageRef> inspect(const std::string& tag) {
    require();
    std::string out;
    if (capture_command({cli_, "image", "inspect", "--format", "{{.Id}}", tag}, out) != 0) return std::nullopt;
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    if (out.empty()) return std::nullopt;
    return ImageRef{tag, out, {}};
  }

  static std::mutex& tag_mutex(const std::string& tag) {
    static std::mutex guard;
    static std::map<std::string, std::unique_ptr<std::mutex>> locks;
    std::lock_guard<std::mutex> g(guard);
    auto& m = locks[tag];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  std::string cli_;
};

// ---------------------------------------------------------------------------
// Operations

inline ImageRef build_image(ExecutionBackend& backend, const BuildRecipe& recipe) {
  if (!backend.can_build())
    throw RuntimeError(RuntimeError::Kind::BackendUnavailable,
                       std::string(to_string(backend.kind())) + " backend cannot build images (can_build=false)");
  return backend.build(recipe);
}

enum class FetchPolicy { PreferRemote, LocalOnly };

/// A recipe that takes its source archive from `cache` through the build
/// context instead of downloading it.
inline BuildRecipe cached_build_recipe(const Registry& registry, const SolverSpec& spec, const ArchiveCache& cache) {
  const SolverEntry& entry = registry.at(spec);
  if (!cache.contains(entry.source.sha256))
    throw RuntimeError(RuntimeError::Kind::ImageUnavailable, "sources of " + spec.str() + " are not in the cache " + cache.root().string());
  BuildRecipe recipe = generate_build_recipe(entry, era_for(registry, spec), SourceDelivery::BuildContext);
  recipe.context_files[recipe_context_source_name(entry)] = read_file(cache.path_for(entry.source.sha256));
  return recipe;
}

/// Returns a usable image: a local one, else (prefer-remote) a pulled one,
/// else a local build. Local-only never pulls; it builds only from a source
/// archive already present in `cache`, served through the build context.
inline ImageRef fetch_or_build(ExecutionBackend& backend, const Registry& registry, const SolverSpec& spec, FetchPolicy policy,
                               const ArchiveCache* cache = nullptr) {
  const SolverEntry& entry = registry.at(spec);
  if (auto local = backend.find_local(entry)) return *local;
  if (policy == FetchPolicy::PreferRemote) {
    if (auto pulled = backend.pull(entry)) return *pulled;
    if (backend.can_build()) return backend.build(generate_build_recipe(registry, spec));
  } else if (backend.can_build() && cache && cache->contains(entry.source.sha256)) {
    return backend.build(cached_build_recipe(registry, spec, *cache));
  }
  throw RuntimeError(RuntimeError::Kind::ImageUnavailable,
                     "no image for " + image_name(spec) +
                         (policy == FetchPolicy::LocalOnly ? " (local-only: not present, no cached sources to build from)"
                                                           : " (not present, not pullable, backend cannot build)"));
}

/// Runs one solver through its wrapper. The status is only set for
/// Timeout, MemOut and abnormal termination; otherwise it stays Unknown for
/// the caller to refine from the solver output.
inline RunOutcome run_solver(ExecutionBackend& backend, const ImageRef& image, const fs::path& input,
                             const std::optional<fs::path>& proof_out, const ResourceLimits& limits, const RunFiles& files) {
  return backend.run(image, input, proof_out, limits, files);
}

struct ExtractResult {
  std::vector<fs::path> files;
  fs::path provenance;
};

inline constexpr std::string_view kProvenanceStubName = "satex-provenance.json";

/// Copies the solver executable and wrapper out of its image into `dest`,
/// with a provenance stub alongside. Writes nothing if `dest` is unwritable.
inline ExtractResult extract_binary(ExecutionBackend& backend, const Registry& registry, const SolverSpec& spec, const fs::path& dest,
                                    FetchPolicy policy = FetchPolicy::LocalOnly) {
  const SolverEntry& entry = registry.at(spec);
  if (!backend.can_extract())
    throw RuntimeError(RuntimeError::Kind::BackendUnavailable, std::string(to_string(backend.kind())) + " backend cannot extract");
  detail::check_destination(dest);
  ImageRef image = fetch_or_build(backend, registry, spec, policy);
  ExtractResult r;
  r.files = backend.extract(image, executable_name(entry.run), dest);
  if (r.files.empty()) throw RuntimeError(RuntimeError::Kind::NothingToExtract, "nothing extracted from " + image.tag);

  std::optional<std::string> digest = backend.inputs_digest(image);
  if (!digest) {
    try {
      digest = recipe_inputs_digest(entry, era_for(registry, spec));
    } catch (const RegistryError&) {
    }
  }
  json stub;
  stub["spec"] = spec.str();
  stub["image"] = image.tag;
  stub["image_id"] = image.id;
  stub["inputs_digest"] = digest ? json(*digest) : json(nullptr);
  stub["files"] = json::array();
  for (const auto& f : r.files) stub["files"].push_back({{"name", f.filename().string()}, {"sha256", sha256_file(f)}});
  r.provenance = dest / kProvenanceStubName;
  write_file(r.provenance, stub.dump(2) + "\n");
  return r;
}

inline std::unique_ptr<ExecutionBackend> make_backend(BackendKind kind, const fs::path& store) {
  if (kind == BackendKind::Process) return std::make_unique<ProcessBackend>(store);
  return std::make_unique<ContainerBackend>();
}

}  // namespace satex
