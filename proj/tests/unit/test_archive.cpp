#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "test_env.hpp"

using namespace satex;
using namespace satex::testing;

namespace {

SourceRef source_for(const std::string& url, const std::string& bytes) {
  return {url, sha256_hex(bytes), SourceKind::SourceArchive, std::nullopt};
}

ArchiveError::Kind error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ArchiveError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ArchiveError";
  return ArchiveError::Kind::NetworkFailure;
}

std::size_t partial_files(const ArchiveCache& cache) {
  std::error_code ec;
  if (!fs::is_directory(cache.root() / ".partial", ec)) return 0;
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(cache.root() / ".partial"), fs::directory_iterator()));
}

ManifestEntry sample_entry(const std::string& spec, const fs::path& file, std::optional<std::string> doi = {}) {
  return ManifestEntry{spec, "https://example.invalid/" + spec, std::move(doi), sha256_file(file), "2020-01-31T12:00:00Z", file,
                       "sha256:" + std::string(64, '0')};
}

}  // namespace

TEST(Fetch, DownloadsVerifiesAndCaches) {
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  MemoryTransport net;
  net.put("https://a.invalid/x.tgz", "payload");
  SourceRef src = source_for("https://a.invalid/x.tgz", "payload");
  fs::path p = fetch(src, cache, net);
  EXPECT_EQ(p, cache.path_for(src.sha256));
  EXPECT_EQ(read_text(p), "payload");
  EXPECT_EQ(net.calls(), 1u);
  EXPECT_EQ(fetch(src, cache, net), p);
  EXPECT_EQ(net.calls(), 1u);
  EXPECT_EQ(partial_files(cache), 0u);
}

TEST(Fetch, CacheHitMakesNoNetworkCalls) {
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  SourceRef src = source_for("https://a.invalid/x.tgz", "payload");
  write_text(cache.path_for(src.sha256), "payload");
  MemoryTransport net;
  EXPECT_EQ(fetch(src, cache, net), cache.path_for(src.sha256));
  EXPECT_EQ(net.calls(), 0u);
}

TEST(Fetch, ChecksumMismatchQuarantines) {
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  MemoryTransport net;
  net.put("https://a.invalid/x.tgz", "tampered");
  SourceRef src = source_for("https://a.invalid/x.tgz", "original");
  try {
    fetch(src, cache, net);
    FAIL();
  } catch (const ArchiveError& e) {
    EXPECT_EQ(e.kind(), ArchiveError::Kind::ChecksumMismatch);
    EXPECT_EQ(e.quarantined(), cache.quarantine_dir() / sha256_hex("tampered"));
    EXPECT_EQ(read_text(e.quarantined()), "tampered");
  }
  EXPECT_FALSE(cache.contains(src.sha256));
  EXPECT_TRUE(cache.audit().empty());
  EXPECT_EQ(partial_files(cache), 0u);
}

TEST(Fetch, CorruptCacheEntryIsRefetched) {
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  SourceRef src = source_for("https://a.invalid/x.tgz", "payload");
  write_text(cache.path_for(src.sha256), "bit rot");
  EXPECT_EQ(cache.audit(), (std::vector<fs::path>{cache.path_for(src.sha256)}));
  MemoryTransport net;
  net.put(src.url, "payload");
  EXPECT_EQ(read_text(fetch(src, cache, net)), "payload");
  EXPECT_EQ(net.calls(), 1u);
  EXPECT_TRUE(cache.audit().empty());
  EXPECT_TRUE(fs::exists(cache.quarantine_dir() / sha256_hex("bit rot")));
}

TEST(Fetch, TransportErrors) {
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  MemoryTransport net;
  net.fail("https://down.invalid/x");
  EXPECT_EQ(error_of([&] { fetch(source_for("https://none.invalid/x", "x"), cache, net); }), ArchiveError::Kind::NotFound);
  EXPECT_EQ(error_of([&] { fetch(source_for("https://down.invalid/x", "x"), cache, net); }), ArchiveError::Kind::NetworkFailure);
  EXPECT_EQ(partial_files(cache), 0u);
  SourceRef bad{"https://a.invalid/x", "nothex", SourceKind::SourceArchive, std::nullopt};
  EXPECT_EQ(error_of([&] { fetch(bad, cache, net); }), ArchiveError::Kind::UnverifiedEntry);
}

TEST(Fetch, UnwritableCache) {
  TempDir dir;
  write_text(dir / "file", "x");
  ArchiveCache cache(dir / "file" / "cache");
  MemoryTransport net;
  net.put("https://a.invalid/x", "x");
  EXPECT_EQ(error_of([&] { fetch(source_for("https://a.invalid/x", "x"), cache, net); }), ArchiveError::Kind::CacheUnwritable);
}

TEST(Fetch, ConcurrentSameHashDownloadsOnce) {
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  MemoryTransport net;
  net.put("https://a.invalid/x", std::string(1 << 20, 'z'));
  SourceRef src = source_for("https://a.invalid/x", std::string(1 << 20, 'z'));
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { fetch(src, cache, net); });
  for (auto& t : threads) t.join();
  EXPECT_EQ(net.calls(), 1u);
  EXPECT_TRUE(cache.audit().empty());
}

TEST(FetchProperty, AuditStaysCleanAndPathsAreContentAddressed) {
  std::mt19937_64 rng(8);
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  ArchiveCache twin(dir / "cache");
  MemoryTransport net;
  std::vector<SourceRef> sources;
  for (int i = 0; i < 30; ++i) {
    std::string url = "https://a.invalid/" + std::to_string(i);
    std::string bytes = "content " + std::to_string(rng() % 10);
    int mode = static_cast<int>(rng() % 4);
    if (mode == 0) net.put(url, bytes + " tampered");
    else if (mode == 1) net.fail(url);
    else net.put(url, bytes);
    sources.push_back(source_for(url, bytes));
  }
  for (int step = 0; step < 200; ++step) {
    const SourceRef& s = sources[rng() % sources.size()];
    try {
      fs::path p = fetch(s, cache, net);
      ASSERT_EQ(p, twin.path_for(s.sha256));
      ASSERT_EQ(p.filename(), s.sha256);
    } catch (const ArchiveError&) {
    }
    ASSERT_TRUE(cache.audit().empty());
  }
}

TEST(Fetch, PrimedCacheMeansZeroNetworkForWholeRegistry) {
  Registry reg = fixture_registry();
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  MemoryTransport net;
  fs::create_directories(cache.root());
  for (const auto& name : {"fixture-solver-src.tar.gz", "toybin-bin.tar.gz"}) {
    std::string bytes = read_file(kFixtures / "archives" / name);
    write_file(cache.path_for(sha256_hex(bytes)), bytes);
  }
  for (const auto& spec : reg.specs()) fetch(reg.at(spec).source, cache, net);
  EXPECT_EQ(net.calls(), 0u);
}

TEST(Fetch, FixtureArchivesMatchRegistryAndSource) {
  Registry reg = fixture_registry();
  std::map<std::string, std::string> by_url;
  for (const auto& name : {"fixture-solver-src.tar.gz", "toybin-bin.tar.gz"})
    by_url["https://fixtures.satex.invalid/" + std::string(name)] = read_file(kFixtures / "archives" / name);
  for (const auto& spec : reg.specs()) {
    const SourceRef& s = reg.at(spec).source;
    ASSERT_TRUE(by_url.count(s.url)) << s.url;
    EXPECT_EQ(sha256_hex(by_url[s.url]), s.sha256) << spec.str();
  }
  // The packed fixture source is the one the tests compile.
  std::string tar = gunzip(by_url["https://fixtures.satex.invalid/fixture-solver-src.tar.gz"]);
  EXPECT_NE(tar.find(read_file(kFixtures / "solver" / "fixture_solver.c")), std::string::npos);
}

TEST(HttpTransport, FileUrls) {
  TempDir dir;
  ArchiveCache cache(dir / "cache");
  HttpTransport http;
  const fs::path archive = kFixtures / "archives" / "toybin-bin.tar.gz";
  SourceRef src{"file://" + archive.string(), sha256_file(archive), SourceKind::BinaryArchive, std::nullopt};
  EXPECT_EQ(sha256_file(fetch(src, cache, http)), src.sha256);
  SourceRef missing{"file://" + (dir / "nope.tgz").string(), std::string(64, 'a'), SourceKind::BinaryArchive, std::nullopt};
  EXPECT_EQ(error_of([&] { fetch(missing, cache, http); }), ArchiveError::Kind::NotFound);
}

TEST(Manifest, InsertionOrderIndependent) {
  TempDir dir;
  write_text(dir / "a", "a");
  write_text(dir / "b", "b");
  ProvenanceManifest m1{{sample_entry("x:1", dir / "a"), sample_entry("y:2", dir / "b")}};
  ProvenanceManifest m2{{sample_entry("y:2", dir / "b"), sample_entry("x:1", dir / "a")}};
  write_manifest(m1, dir / "m1.json");
  write_manifest(m2, dir / "m2.json");
  EXPECT_EQ(read_text(dir / "m1.json"), read_text(dir / "m2.json"));
}

TEST(ManifestProperty, PermutationsRenderIdentically) {
  std::mt19937_64 rng(21);
  TempDir dir;
  for (int round = 0; round < 50; ++round) {
    ProvenanceManifest m;
    std::size_t n = rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      fs::path f = dir / ("f" + std::to_string(rng() % 4));
      write_text(f, f.filename().string());
      ManifestEntry e = sample_entry("s" + std::to_string(rng() % 3) + ":1", f);
      if (rng() % 2) e.doi = "10.1/" + std::to_string(rng() % 3);
      e.fetch_time = "2020-01-0" + std::to_string(1 + rng() % 3) + "T00:00:00Z";
      m.entries.push_back(e);
    }
    const std::string expected = render_manifest(m);
    for (int k = 0; k < 5; ++k) {
      std::shuffle(m.entries.begin(), m.entries.end(), rng);
      ASSERT_EQ(render_manifest(m), expected);
    }
  }
}

TEST(Manifest, DoiVerbatimEmptyAndRoundTrip) {
  TempDir dir;
  write_text(dir / "a", "a");
  ProvenanceManifest m{{sample_entry("x:1", dir / "a", "10.5281/zenodo.3608931")}};
  write_manifest(m, dir / "m.json");
  EXPECT_NE(read_text(dir / "m.json").find("\"doi\": \"10.5281/zenodo.3608931\""), std::string::npos);
  ProvenanceManifest back = read_manifest(dir / "m.json");
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(back.entries[0].key(), m.entries[0].key());

  write_manifest(ProvenanceManifest{}, dir / "empty.json");
  json j = json::parse(read_text(dir / "empty.json"));
  EXPECT_EQ(j["format"], kManifestFormat);
  EXPECT_TRUE(j["entries"].is_array());
  EXPECT_TRUE(j["entries"].empty());
}

TEST(Manifest, UnverifiedEntry) {
  TempDir dir;
  write_text(dir / "a", "a");
  ManifestEntry e = sample_entry("x:1", dir / "a");
  write_text(dir / "a", "changed");
  EXPECT_EQ(error_of([&] { write_manifest(ProvenanceManifest{{e}}, dir / "m.json"); }), ArchiveError::Kind::UnverifiedEntry);
  EXPECT_FALSE(fs::exists(dir / "m.json"));
}
