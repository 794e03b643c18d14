#pragma once

// Child process execution with output redirection, resource limits and a
// host-side wall-clock deadline. Children run in their own process group so a
// timeout kills every descendant.

#include <fcntl.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

extern char** environ;

namespace satex {

namespace fs = std::filesystem;

class SpawnError : public std::runtime_error {
 public:
  SpawnError(const std::string& what, int err) : std::runtime_error(what + ": " + std::strerror(err)), err_(err) {}
  int error_code() const { return err_; }

 private:
  int err_;
};

struct SpawnRequest {
  std::vector<std::string> argv;
  /// Empty paths inherit the parent's stream; stdin always reads /dev/null
  /// unless inherit_stdin is set.
  fs::path stdout_path;
  fs::path stderr_path;
  bool inherit_stdin = false;
  std::optional<fs::path> cwd;
  /// Added to (or replacing entries of) the parent's environment.
  std::map<std::string, std::string> env;
  /// Seconds; non-finite means no deadline.
  double timeout = std::numeric_limits<double>::infinity();
  std::optional<std::uint64_t> memory_limit;
  std::optional<unsigned> cpu_count;
  /// Called once when the deadline passes or on interrupt, before the group
  /// is killed.
  std::function<void()> on_timeout;
};

struct SpawnResult {
  /// Exit status, or 128 + signal number for signal deaths.
  int exit_code = 0;
  bool signaled = false;
  int term_signal = 0;
  bool timed_out = false;
  /// Killed because request_interrupt() was called.
  bool interrupted = false;
  double wall_time = 0.0;
};

/// Set from a signal handler to make every running spawn_and_wait kill its
/// child group and return.
inline volatile std::sig_atomic_t& interrupt_flag() {
  static volatile std::sig_atomic_t flag = 0;
  return flag;
}

inline void request_interrupt() { interrupt_flag() = 1; }

namespace detail {

inline std::string find_in_path(const std::string& name, const std::string& path_var) {
  if (name.find('/') != std::string::npos) return name;
  std::size_t start = 0;
  while (start <= path_var.size()) {
    std::size_t end = path_var.find(':', start);
    if (end == std::string::npos) end = path_var.size();
    std::string dir = path_var.substr(start, end - start);
    if (dir.empty()) dir = ".";
    std::string candidate = dir + "/" + name;
    if (::access(candidate.c_str(), X_OK) == 0 && !fs::is_directory(candidate)) return candidate;
    start = end + 1;
  }
  return {};
}

}  // namespace detail

/// Looks up an executable on PATH; returns an empty string when absent.
inline std::string which(const std::string& name) {
  if (name.find('/') != std::string::npos) return ::access(name.c_str(), X_OK) == 0 && !fs::is_directory(name) ? name : "";
  const char* path = std::getenv("PATH");
  return detail::find_in_path(name, path ? path : "/usr/bin:/bin");
}

/// Runs a child to completion. Throws SpawnError when the program cannot be
/// started; every other outcome is reported in the result.
inline SpawnResult spawn_and_wait(const SpawnRequest& req) {
  if (req.argv.empty()) throw SpawnError("spawn: empty argv", EINVAL);

  // Everything the child needs is prepared before fork(): only
  // async-signal-safe calls happen between fork() and exec().
  std::map<std::string, std::string> env_map;
  for (char** e = environ; e && *e; ++e) {
    std::string kv(*e);
    auto eq = kv.find('=');
    if (eq != std::string::npos) env_map[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const auto& [k, v] : req.env) env_map[k] = v;
  std::vector<std::string> env_strings;
  for (const auto& [k, v] : env_map) env_strings.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);

  const std::string path_var = env_map.count("PATH") ? env_map["PATH"] : "/usr/bin:/bin";
  std::string exe = detail::find_in_path(req.argv[0], path_var);
  if (exe.empty()) throw SpawnError("spawn: '" + req.argv[0] + "' not found on PATH", ENOENT);

  std::vector<std::string> args = req.argv;
  std::vector<char*> argvp;
  for (auto& a : args) argvp.push_back(a.data());
  argvp.push_back(nullptr);

  const std::string out_path = req.stdout_path.string();
  const std::string err_path = req.stderr_path.string();
  const std::string cwd = req.cwd ? req.cwd->string() : std::string();

  int status_pipe[2];
  if (::pipe2(status_pipe, O_CLOEXEC) != 0) throw SpawnError("spawn: pipe", errno);

  auto start = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0) {
    int err = errno;
    ::close(status_pipe[0]);
    ::close(status_pipe[1]);
    throw SpawnError("spawn: fork", err);
  }
  if (pid == 0) {
    ::close(status_pipe[0]);
    auto die = [&](int err) {
      ssize_t ignored = ::write(status_pipe[1], &err, sizeof err);
      (void)ignored;
      ::_exit(127);
    };
    ::setpgid(0, 0);
    sigset_t none;
    sigemptyset(&none);
    ::sigprocmask(SIG_SETMASK, &none, nullptr);
    if (!req.inherit_stdin) {
      int fd = ::open("/dev/null", O_RDONLY);
      if (fd < 0 || ::dup2(fd, 0) < 0) die(errno);
      ::close(fd);
    }
    if (!out_path.empty()) {
      int fd = ::open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      if (fd < 0 || ::dup2(fd, 1) < 0) die(errno);
      ::close(fd);
    }
    if (!err_path.empty()) {
      int fd = ::open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      if (fd < 0 || ::dup2(fd, 2) < 0) die(errno);
      ::close(fd);
    }
    if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) die(errno);
    if (req.memory_limit) {
      struct rlimit rl{static_cast<rlim_t>(*req.memory_limit), static_cast<rlim_t>(*req.memory_limit)};
      if (::setrlimit(RLIMIT_AS, &rl) != 0) die(errno);
    }
    if (req.cpu_count && *req.cpu_count > 0) {
      cpu_set_t set;
      CPU_ZERO(&set);
      cpu_set_t avail;
      if (::sched_getaffinity(0, sizeof avail, &avail) == 0) {
        unsigned taken = 0;
        for (int c = 0; c < CPU_SETSIZE && taken < *req.cpu_count; ++c)
          if (CPU_ISSET(c, &avail)) {
            CPU_SET(c, &set);
            ++taken;
          }
        ::sched_setaffinity(0, sizeof set, &set);
      }
    }
    ::execve(exe.c_str(), argvp.data(), envp.data());
    die(errno);
  }

  ::setpgid(pid, pid);  // also done by the child; whichever runs first wins
  ::close(status_pipe[1]);
  int child_errno = 0;
  ssize_t n = ::read(status_pipe[0], &child_errno, sizeof child_errno);
  ::close(status_pipe[0]);
  if (n == static_cast<ssize_t>(sizeof child_errno)) {
    ::waitpid(pid, nullptr, 0);
    throw SpawnError("spawn: cannot execute '" + req.argv[0] + "'", child_errno);
  }

  SpawnResult result;
  int status = 0;
  const bool has_deadline = std::isfinite(req.timeout);
  const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(has_deadline ? req.timeout : 0.0));
  auto poll = std::chrono::microseconds(500);
  for (;;) {
    pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) {
      status = 0;
      break;
    }
    auto now = std::chrono::steady_clock::now();
    const bool interrupted = interrupt_flag() != 0;
    if (interrupted || (has_deadline && now >= deadline)) {
      (interrupted ? result.interrupted : result.timed_out) = true;
      if (req.on_timeout) req.on_timeout();
      ::killpg(pid, SIGKILL);
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
      break;
    }
    auto sleep_for = poll;
    if (has_deadline) sleep_for = std::min(sleep_for, std::chrono::duration_cast<std::chrono::microseconds>(deadline - now));
    std::this_thread::sleep_for(sleep_for);
    poll = std::min(poll * 2, std::chrono::microseconds(10000));
  }
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  // Reap stragglers that outlived the group leader.
  ::killpg(pid, SIGKILL);

  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.signaled = true;
    result.term_signal = WTERMSIG(status);
    result.exit_code = 128 + result.term_signal;
  }
  return result;
}

/// Runs a short helper command and returns its stdout; stderr is captured
/// into `err` when given.
inline int capture_command(const std::vector<std::string>& argv, std::string& out, std::string* err = nullptr,
                           const fs::path& scratch_dir = fs::temp_directory_path()) {
  static std::atomic<unsigned> counter{0};
  const std::string stem = "satex-cmd-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  const fs::path out_file = scratch_dir / (stem + ".out");
  const fs::path err_file = scratch_dir / (stem + ".err");
  SpawnRequest req;
  req.argv = argv;
  req.stdout_path = out_file;
  req.stderr_path = err_file;
  SpawnResult res;
  try {
    res = spawn_and_wait(req);
  } catch (...) {
    std::error_code ec;
    fs::remove(out_file, ec);
    fs::remove(err_file, ec);
    throw;
  }
  auto slurp = [](const fs::path& p) {
    std::string s;
    if (FILE* f = std::fopen(p.c_str(), "rb")) {
      char buf[4096];
      std::size_t n;
      while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) s.append(buf, n);
      std::fclose(f);
    }
    return s;
  };
  out = slurp(out_file);
  if (err) *err = slurp(err_file);
  std::error_code ec;
  fs::remove(out_file, ec);
  fs::remove(err_file, ec);
  return res.exit_code;
}

}  // namespace satex
