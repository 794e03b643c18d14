#pragma once

// Content-addressed download cache and provenance manifests.
//
// Cache layout:
//   <cache>/<sha256>                  verified artifact
//   <cache>/quarantine/<actual-sha>   bytes that failed verification
//   <cache>/.partial/                 in-flight downloads

#include <curl/curl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "satex/gzip.hpp"
#include "satex/hash.hpp"
#include "satex/registry.hpp"

namespace satex {

class ArchiveError : public std::runtime_error {
 public:
  enum class Kind { ChecksumMismatch, NetworkFailure, NotFound, UnverifiedEntry, CacheUnwritable };

  ArchiveError(Kind kind, const std::string& what, fs::path quarantined = {})
      : std::runtime_error(what), kind_(kind), quarantined_(std::move(quarantined)) {}

  Kind kind() const { return kind_; }
  /// Where rejected bytes were kept (ChecksumMismatch only).
  const fs::path& quarantined() const { return quarantined_; }

 private:
  Kind kind_;
  fs::path quarantined_;
};

/// Downloads one URL into a local file. Implementations throw ArchiveError
/// with NotFound or NetworkFailure.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void download(const std::string& url, const fs::path& dest) = 0;
};

/// libcurl-backed transport (http, https, ftp, file).
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(long timeout_seconds = 600) : timeout_(timeout_seconds) {
    static const bool once = [] { return curl_global_init(CURL_GLOBAL_DEFAULT) == CURLE_OK; }();
    if (!once) throw ArchiveError(ArchiveError::Kind::NetworkFailure, "libcurl initialisation failed");
  }

  void download(const std::string& url, const fs::path& dest) override {
    std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), &curl_easy_cleanup);
    if (!curl) throw ArchiveError(ArchiveError::Kind::NetworkFailure, "libcurl: cannot create handle");
    std::unique_ptr<FILE, decltype(&std::fclose)> out(std::fopen(dest.c_str(), "wb"), &std::fclose);
    if (!out) throw ArchiveError(ArchiveError::Kind::CacheUnwritable, "cannot write " + dest.string());
    char errbuf[CURL_ERROR_SIZE] = {};
    curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, out.get());
    curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT, timeout_);
    curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, errbuf);
    curl_easy_setopt(curl.get(), CURLOPT_USERAGENT, "satex");
    CURLcode rc = curl_easy_perform(curl.get());
    long http = 0;
    curl_easy_getinfo(curl.get(), CURLINFO_RESPONSE_CODE, &http);
    out.reset();
    if (rc == CURLE_OK) return;
    std::string msg = url + ": " + (errbuf[0] ? errbuf : curl_easy_strerror(rc));
    if (http == 404 || http == 410 || rc == CURLE_FILE_COULDNT_READ_FILE || rc == CURLE_REMOTE_FILE_NOT_FOUND)
      throw ArchiveError(ArchiveError::Kind::NotFound, msg);
    throw ArchiveError(ArchiveError::Kind::NetworkFailure, msg);
  }

 private:
  long timeout_;
};

/// In-memory transport for offline tests; counts every download attempt.
class MemoryTransport final : public Transport {
 public:
  void put(const std::string& url, std::string bytes) {
    std::lock_guard<std::mutex> g(mu_);
    files_[url] = std::move(bytes);
  }
  void fail(const std::string& url) {
    std::lock_guard<std::mutex> g(mu_);
    failing_[url] = true;
  }

  void download(const std::string& url, const fs::path& dest) override {
    ++calls_;
    std::string bytes;
    {
      std::lock_guard<std::mutex> g(mu_);
      if (failing_.count(url)) throw ArchiveError(ArchiveError::Kind::NetworkFailure, url + ": simulated network failure");
      auto it = files_.find(url);
      if (it == files_.end()) throw ArchiveError(ArchiveError::Kind::NotFound, url + ": not found");
      bytes = it->second;
    }
    write_file(dest, bytes);
  }

  std::size_t calls() const { return calls_; }

 private:
  std::mutex mu_;
  std::map<std::string, std::string> files_;
  std::map<std::string, bool> failing_;
  std::atomic<std::size_t> calls_{0};
};

class ArchiveCache {
 public:
  explicit ArchiveCache(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  fs::path path_for(const std::string& sha256) const { return root_ / sha256; }
  fs::path quarantine_dir() const { return root_ / "quarantine"; }
  bool contains(const std::string& sha256) const {
    std::error_code ec;
    return is_sha256_hex(sha256) && fs::is_regular_file(path_for(sha256), ec);
  }

  /// Cached files whose content no longer matches their name.
  std::vector<fs::path> audit() const {
    std::vector<fs::path> bad;
    std::error_code ec;
    if (!fs::is_directory(root_, ec)) return bad;
    for (const auto& e : fs::directory_iterator(root_)) {
      const std::string name = e.path().filename().string();
      if (!e.is_regular_file() || !is_sha256_hex(name)) continue;
      if (sha256_file(e.path()) != name) bad.push_back(e.path());
    }
    std::sort(bad.begin(), bad.end());
    return bad;
  }

 private:
  fs::path root_;
};

namespace detail {

inline std::mutex& hash_mutex(const std::string& sha) {
  static std::mutex guard;
  static std::map<std::string, std::unique_ptr<std::mutex>> locks;
  std::lock_guard<std::mutex> g(guard);
  auto& m = locks[sha];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

inline fs::path quarantine(const ArchiveCache& cache, const fs::path& file, const std::string& actual) {
  fs::create_directories(cache.quarantine_dir());
  fs::path q = cache.quarantine_dir() / actual;
  fs::rename(file, q);
  return q;
}

}  // namespace detail

/// Returns the verified cached copy of `source`, downloading it on a miss.
inline fs::path fetch(const SourceRef& source, const ArchiveCache& cache, Transport& transport) {
  if (source.url.empty()) throw ArchiveError(ArchiveError::Kind::NotFound, "empty source URL");
  if (!is_sha256_hex(source.sha256))
    throw ArchiveError(ArchiveError::Kind::UnverifiedEntry, "malformed sha256 for " + source.url + ": " + source.sha256);
  std::lock_guard<std::mutex> lock(detail::hash_mutex(source.sha256));

  const fs::path target = cache.path_for(source.sha256);
  std::error_code ec;
  if (fs::is_regular_file(target, ec)) {
    std::string actual = sha256_file(target);
    if (actual == source.sha256) return target;
    detail::quarantine(cache, target, actual);  // corrupted cache entry: fetch again
  }

  fs::path partial_dir = cache.root() / ".partial";
  fs::create_directories(partial_dir, ec);
  if (ec || ::access(partial_dir.c_str(), W_OK) != 0)
    throw ArchiveError(ArchiveError::Kind::CacheUnwritable, "cache not writable: " + cache.root().string());
  static std::atomic<unsigned> counter{0};
  fs::path part = partial_dir / (source.sha256 + "." + std::to_string(::getpid()) + "." + std::to_string(counter++));
  try {
    transport.download(source.url, part);
  } catch (...) {
    fs::remove(part, ec);
    throw;
  }
  std::string actual = sha256_file(part);
  if (actual != source.sha256) {
    fs::path q = detail::quarantine(cache, part, actual);
    throw ArchiveError(ArchiveError::Kind::ChecksumMismatch,
                       "checksum mismatch for " + source.url + ": expected " + source.sha256 + ", got " + actual +
                           " (kept as " + q.string() + ")",
                       q);
  }
  fs::rename(part, target);
  return target;
}

// ---------------------------------------------------------------------------
// Provenance manifests

inline constexpr std::string_view kManifestFormat = "satex-manifest/1";

struct ManifestEntry {
  std::string spec;
  std::string url;
  std::optional<std::string> doi;
  std::string sha256;
  /// UTC, ISO 8601 (`2020-01-31T12:00:00Z`).
  std::string fetch_time;
  fs::path cache_path;
  std::optional<std::string> inputs_digest;

  auto key() const { return std::tie(spec, sha256, url, fetch_time, cache_path, doi, inputs_digest); }
  bool operator<(const ManifestEntry& o) const { return key() < o.key(); }
};

struct ProvenanceManifest {
  std::vector<ManifestEntry> entries;
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now()) {
  std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  ::gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline json to_json(const ManifestEntry& e) {
  json j;
  j["spec"] = e.spec;
  j["url"] = e.url;
  j["doi"] = e.doi ? json(*e.doi) : json(nullptr);
  j["sha256"] = e.sha256;
  j["fetch_time"] = e.fetch_time;
  j["cache_path"] = e.cache_path.string();
  j["inputs_digest"] = e.inputs_digest ? json(*e.inputs_digest) : json(nullptr);
  return j;
}

/// Canonical manifest text: entries sorted, keys sorted, two-space indent,
/// trailing newline.
inline std::string render_manifest(ProvenanceManifest m) {
  std::sort(m.entries.begin(), m.entries.end());
  json j;
  j["format"] = kManifestFormat;
  j["entries"] = json::array();
  for (const auto& e : m.entries) j["entries"].push_back(to_json(e));
  return j.dump(2) + "\n";
}

/// Writes the manifest after re-verifying every entry against its cached file.
inline void write_manifest(const ProvenanceManifest& manifest, const fs::path& out) {
  for (const auto& e : manifest.entries) {
    std::error_code ec;
    if (!fs::is_regular_file(e.cache_path, ec) || sha256_file(e.cache_path) != e.sha256)
      throw ArchiveError(ArchiveError::Kind::UnverifiedEntry,
                         e.spec + ": cached file " + e.cache_path.string() + " does not match sha256 " + e.sha256);
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file(out, render_manifest(manifest));
}

inline ProvenanceManifest read_manifest(const fs::path& path) {
  json j = json::parse(read_file(path));
  ProvenanceManifest m;
  for (const auto& e : j.at("entries")) {
    ManifestEntry me;
    me.spec = e.at("spec").get<std::string>();
    me.url = e.at("url").get<std::string>();
    if (!e.at("doi").is_null()) me.doi = e.at("doi").get<std::string>();
    me.sha256 = e.at("sha256").get<std::string>();
    me.fetch_time = e.at("fetch_time").get<std::string>();
    me.cache_path = e.at("cache_path").get<std::string>();
    if (!e.at("inputs_digest").is_null()) me.inputs_digest = e.at("inputs_digest").get<std::string>();
    m.entries.push_back(std::move(me));
  }
  return m;
}

inline ManifestEntry manifest_entry(const SolverEntry& entry, const fs::path& cached, std::optional<std::string> inputs_digest = {},
                                    std::string fetch_time = utc_timestamp()) {
  return ManifestEntry{entry.spec.str(), entry.source.url, entry.doi(), entry.source.sha256,
                       std::move(fetch_time), cached, std::move(inputs_digest)};
}

}  // namespace satex
