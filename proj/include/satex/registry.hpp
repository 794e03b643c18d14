#pragma once

// The solver catalog. A registry root holds one directory per solver set;
// each set directory carries `solvers.json` (the entries) and optionally
// `setup.json` (era override and defaults merged under every entry). An
// optional `eras.json` at the root replaces the built-in era table.

#include <algorithm>
#include <cctype>
#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "satex/default_eras.hpp"
#include "satex/gzip.hpp"
#include "satex/hash.hpp"

namespace satex {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Matches `str` against a shell glob supporting `*` and `?`.
inline bool glob_match(std::string_view pattern, std::string_view str) {
  std::size_t p = 0, s = 0;
  std::size_t star_p = std::string_view::npos, star_s = 0;
  while (s < str.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == str[s])) {
      ++p;
      ++s;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star_p = p++;
      star_s = s;
    } else if (star_p != std::string_view::npos) {
      p = star_p + 1;
      s = ++star_s;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

// ---------------------------------------------------------------------------
// Errors

class RegistryError : public std::runtime_error {
 public:
  enum class Kind { Unreadable, MalformedFile, DuplicateSpec, MissingField, BadPlaceholder, NoMatch, UnknownSpec, NoEraConfigured };

  RegistryError(Kind kind, std::string message, fs::path file = {}, std::size_t line = 0)
      : std::runtime_error(format(kind, message, file, line)), kind_(kind), file_(std::move(file)), line_(line) {}

  Kind kind() const { return kind_; }
  const fs::path& file() const { return file_; }
  std::size_t line() const { return line_; }

  static std::string_view kind_name(Kind k) {
    switch (k) {
      case Kind::Unreadable: return "Unreadable";
      case Kind::MalformedFile: return "MalformedFile";
      case Kind::DuplicateSpec: return "DuplicateSpec";
      case Kind::MissingField: return "MissingField";
      case Kind::BadPlaceholder: return "BadPlaceholder";
      case Kind::NoMatch: return "NoMatch";
      case Kind::UnknownSpec: return "UnknownSpec";
      case Kind::NoEraConfigured: return "NoEraConfigured";
    }
    return "?";
  }

 private:
  static std::string format(Kind kind, const std::string& message, const fs::path& file, std::size_t line) {
    std::string out;
    if (!file.empty()) {
      out += file.string();
      if (line) out += ":" + std::to_string(line);
      out += ": ";
    }
    out += std::string(kind_name(kind)) + ": " + message;
    return out;
  }

  Kind kind_;
  fs::path file_;
  std::size_t line_;
};

// ---------------------------------------------------------------------------
// Identity

inline bool valid_identifier(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
  });
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

struct SolverSpec {
  std::string name;
  std::string version;

  /// Parses `name:version` (case-insensitive). Throws std::invalid_argument.
  static SolverSpec parse(std::string_view text) {
    auto colon = text.find(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("solver spec '" + std::string(text) + "' lacks ':'");
    SolverSpec s{to_lower(text.substr(0, colon)), to_lower(text.substr(colon + 1))};
    if (!valid_identifier(s.name) || !valid_identifier(s.version))
      throw std::invalid_argument("solver spec '" + std::string(text) + "' must match [a-z0-9._-]+:[a-z0-9._-]+");
    return s;
  }

  std::string str() const { return name + ":" + version; }

  friend auto operator<=>(const SolverSpec&, const SolverSpec&) = default;
};

/// Container image tag for a solver.
inline std::string image_name(const SolverSpec& spec) { return "satex/" + spec.name + ":" + spec.version; }

/// Inverse of image_name.
inline SolverSpec spec_from_image_name(std::string_view image) {
  constexpr std::string_view prefix = "satex/";
  if (image.substr(0, prefix.size()) != prefix) throw std::invalid_argument("not a satex image name: " + std::string(image));
  return SolverSpec::parse(image.substr(prefix.size()));
}

// ---------------------------------------------------------------------------
// Entries

enum class SourceKind { SourceArchive, BinaryArchive };

inline std::string_view to_string(SourceKind k) { return k == SourceKind::SourceArchive ? "source-archive" : "binary-archive"; }

struct SourceRef {
  std::string url;
  std::string sha256;
  SourceKind kind = SourceKind::SourceArchive;
  std::optional<std::string> doi;

  friend bool operator==(const SourceRef&, const SourceRef&) = default;
};

struct BuildConfig {
  std::vector<std::string> commands;
  /// Path of the solver executable relative to the unpacked archive root.
  std::string artifact;
  std::optional<std::string> builder_image;

  friend bool operator==(const BuildConfig&, const BuildConfig&) = default;
};

inline constexpr std::string_view kInputPlaceholder = "INPUT";
inline constexpr std::string_view kProofPlaceholder = "PROOF";

struct RunConfig {
  /// Whitespace separated argv template. The first token names the solver
  /// executable; INPUT and PROOF are substituted inside tokens.
  std::string command_template;
  /// Inserted right after the executable token.
  std::vector<std::string> options;
  bool proof_capable = false;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct EraConfig {
  std::string version_token;
  std::string builder_base;
  std::string runtime_base;

  friend bool operator==(const EraConfig&, const EraConfig&) = default;
};

/// Partial era override; either base may be left to the next level.
struct EraOverride {
  std::optional<std::string> builder_base;
  std::optional<std::string> runtime_base;

  friend bool operator==(const EraOverride&, const EraOverride&) = default;
};

struct SolverEntry {
  SolverSpec spec;
  SourceRef source;
  BuildConfig build;
  RunConfig run;
  std::map<std::string, std::string> meta;
  std::optional<EraOverride> era;
  /// File the entry was loaded from (empty for programmatic entries).
  fs::path origin;

  friend bool operator==(const SolverEntry&, const SolverEntry&) = default;

  std::optional<std::string> doi() const {
    if (auto it = meta.find("doi"); it != meta.end()) return it->second;
    return source.doi;
  }
};

struct SolverSet {
  std::string set_id;
  std::optional<EraOverride> era;
  std::vector<SolverEntry> entries;
  fs::path origin;

  friend bool operator==(const SolverSet&, const SolverSet&) = default;
};

namespace detail {

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

// Single left-to-right pass, so substituted text is never rescanned.
inline std::string substitute(std::string_view tok, std::string_view input, std::string_view proof) {
  std::string out;
  for (std::size_t i = 0; i < tok.size();) {
    if (tok.substr(i, kInputPlaceholder.size()) == kInputPlaceholder) {
      out += input;
      i += kInputPlaceholder.size();
    } else if (tok.substr(i, kProofPlaceholder.size()) == kProofPlaceholder) {
      out += proof;
      i += kProofPlaceholder.size();
    } else {
      out += tok[i++];
    }
  }
  return out;
}

}  // namespace detail

/// Checks the INPUT/PROOF rules of a run configuration; returns an error
/// message or nothing.
inline std::optional<std::string> placeholder_violation(const RunConfig& run) {
  auto tokens = detail::split_ws(run.command_template);
  if (tokens.empty()) return "empty command template";
  std::size_t inputs = detail::count_occurrences(run.command_template, kInputPlaceholder);
  std::size_t proofs = detail::count_occurrences(run.command_template, kProofPlaceholder);
  if (inputs != 1) return "template must contain INPUT exactly once (found " + std::to_string(inputs) + ")";
  if (proofs > 1) return "template may contain PROOF at most once (found " + std::to_string(proofs) + ")";
  if ((proofs == 1) != run.proof_capable)
    return run.proof_capable ? "proof-capable entry lacks PROOF in its template" : "PROOF in template of an entry not marked proof-capable";
  if (tokens.front().find(kInputPlaceholder) != std::string::npos || tokens.front().find(kProofPlaceholder) != std::string::npos)
    return "first template token must name the executable";
  for (const auto& opt : run.options)
    if (opt.find(kInputPlaceholder) != std::string::npos || opt.find(kProofPlaceholder) != std::string::npos)
      return "default options must not contain placeholders";
  return std::nullopt;
}

/// Name of the solver executable (basename of the first template token).
inline std::string executable_name(const RunConfig& run) {
  auto tokens = detail::split_ws(run.command_template);
  if (tokens.empty()) return {};
  return fs::path(tokens.front()).filename().string();
}

/// Substitutes INPUT/PROOF into the template. Without a proof path, every
/// token mentioning PROOF is dropped.
inline std::vector<std::string> render_command(const RunConfig& run, std::string_view input,
                                               std::optional<std::string_view> proof = std::nullopt) {
  std::vector<std::string> argv;
  auto tokens = detail::split_ws(run.command_template);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!proof && tokens[i].find(kProofPlaceholder) != std::string::npos) continue;
    argv.push_back(detail::substitute(tokens[i], input, proof.value_or("")));
    if (i == 0) argv.insert(argv.end(), run.options.begin(), run.options.end());
  }
  return argv;
}

inline std::string join_command(const std::vector<std::string>& argv) {
  std::string out;
  for (const auto& a : argv) {
    if (!out.empty()) out += ' ';
    out += a;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical JSON (also the basis for digests)

inline json to_json(const EraOverride& e) {
  json j = json::object();
  if (e.builder_base) j["builder"] = *e.builder_base;
  if (e.runtime_base) j["runtime"] = *e.runtime_base;
  return j;
}

inline json to_json(const SolverEntry& e) {
  json j;
  j["name"] = e.spec.name;
  j["version"] = e.spec.version;
  j["source"] = {{"url", e.source.url}, {"sha256", e.source.sha256}, {"kind", std::string(to_string(e.source.kind))}};
  if (e.source.doi) j["source"]["doi"] = *e.source.doi;
  j["build"] = {{"commands", e.build.commands}, {"artifact", e.build.artifact}};
  if (e.build.builder_image) j["build"]["builder_image"] = *e.build.builder_image;
  j["run"] = {{"command", e.run.command_template}, {"options", e.run.options}, {"proof", e.run.proof_capable}};
  j["meta"] = e.meta;
  if (e.era) j["era"] = to_json(*e.era);
  return j;
}

inline std::string entry_digest(const SolverEntry& e) { return sha256_hex(to_json(e).dump()); }

// ---------------------------------------------------------------------------
// Registry

class Registry {
 public:
  Registry() = default;
  Registry(std::vector<SolverSet> sets, std::map<std::string, EraConfig> era_table)
      : sets_(std::move(sets)), era_table_(std::move(era_table)) {
    index();
  }

  const std::vector<SolverSet>& sets() const { return sets_; }
  const std::map<std::string, EraConfig>& era_table() const { return era_table_; }

  std::size_t entry_count() const { return by_spec_.size(); }

  /// All specs in lexicographic order.
  std::vector<SolverSpec> specs() const {
    std::vector<SolverSpec> out;
    out.reserve(by_spec_.size());
    for (const auto& [spec, _] : by_spec_) out.push_back(spec);
    return out;
  }

  const SolverEntry* find(const SolverSpec& spec) const {
    auto it = by_spec_.find(spec);
    return it == by_spec_.end() ? nullptr : &entry_at(it->second);
  }

  const SolverEntry& at(const SolverSpec& spec) const {
    if (const SolverEntry* e = find(spec)) return *e;
    throw RegistryError(RegistryError::Kind::UnknownSpec, "no solver " + spec.str() + " in registry");
  }

  const SolverSet& set_of(const SolverSpec& spec) const {
    auto it = by_spec_.find(spec);
    if (it == by_spec_.end()) throw RegistryError(RegistryError::Kind::UnknownSpec, "no solver " + spec.str() + " in registry");
    return sets_[it->second.first];
  }

  /// Content digest over every entry and the era table.
  std::string digest() const {
    json j;
    j["eras"] = json::object();
    for (const auto& [k, e] : era_table_) j["eras"][k] = {{"builder", e.builder_base}, {"runtime", e.runtime_base}};
    j["sets"] = json::object();
    for (const auto& set : sets_) {
      json s;
      if (set.era) s["era"] = to_json(*set.era);
      s["entries"] = json::array();
      for (const auto& e : set.entries) s["entries"].push_back(to_json(e));
      j["sets"][set.set_id] = s;
    }
    return sha256_hex(j.dump());
  }

  /// Adds an entry to an existing or new set; used to build registries in code.
  void add(const std::string& set_id, SolverEntry entry) {
    if (const SolverEntry* prior = find(entry.spec))
      throw RegistryError(RegistryError::Kind::DuplicateSpec,
                          entry.spec.str() + " already declared in " + prior->origin.string(), entry.origin);
    auto it = std::find_if(sets_.begin(), sets_.end(), [&](const SolverSet& s) { return s.set_id == set_id; });
    if (it == sets_.end()) {
      sets_.push_back(SolverSet{set_id, std::nullopt, {}, {}});
      it = std::prev(sets_.end());
    }
    it->entries.push_back(std::move(entry));
    index();
  }

 private:
  const SolverEntry& entry_at(std::pair<std::size_t, std::size_t> pos) const { return sets_[pos.first].entries[pos.second]; }

  void index() {
    by_spec_.clear();
    std::set<std::string> ids;
    for (std::size_t s = 0; s < sets_.size(); ++s) {
      if (!ids.insert(sets_[s].set_id).second)
        throw RegistryError(RegistryError::Kind::MalformedFile, "duplicate set id '" + sets_[s].set_id + "'", sets_[s].origin);
      for (std::size_t e = 0; e < sets_[s].entries.size(); ++e) {
        const SolverEntry& entry = sets_[s].entries[e];
        auto [it, inserted] = by_spec_.emplace(entry.spec, std::pair{s, e});
        if (!inserted) {
          const SolverEntry& first = entry_at(it->second);
          throw RegistryError(RegistryError::Kind::DuplicateSpec,
                              entry.spec.str() + " declared in both " + first.origin.string() + " and " + entry.origin.string(),
                              entry.origin);
        }
      }
    }
  }

  std::vector<SolverSet> sets_;
  std::map<std::string, EraConfig> era_table_;
  std::map<SolverSpec, std::pair<std::size_t, std::size_t>> by_spec_;
};

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline std::size_t line_of_byte(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

inline json read_json(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw RegistryError(RegistryError::Kind::Unreadable, e.what(), path);
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw RegistryError(RegistryError::Kind::MalformedFile, e.what(), path, line_of_byte(text, e.byte == 0 ? 0 : e.byte - 1));
  }
}

struct FieldReader {
  const json& obj;
  const fs::path& file;
  std::string where;

  const json* get(const char* key) const {
    auto it = obj.find(key);
    return it == obj.end() || it->is_null() ? nullptr : &*it;
  }

  [[noreturn]] void fail(RegistryError::Kind kind, const std::string& msg) const {
    throw RegistryError(kind, where + ": " + msg, file);
  }

  std::string str(const char* key) const {
    const json* v = get(key);
    if (!v) fail(RegistryError::Kind::MissingField, std::string("missing field '") + key + "'");
    if (!v->is_string()) fail(RegistryError::Kind::MalformedFile, std::string("field '") + key + "' must be a string");
    return v->get<std::string>();
  }

  std::optional<std::string> opt_str(const char* key) const {
    if (!get(key)) return std::nullopt;
    return str(key);
  }

  std::vector<std::string> str_list(const char* key) const {
    const json* v = get(key);
    if (!v) return {};
    if (!v->is_array()) fail(RegistryError::Kind::MalformedFile, std::string("field '") + key + "' must be a list of strings");
    std::vector<std::string> out;
    for (const auto& item : *v) {
      if (!item.is_string()) fail(RegistryError::Kind::MalformedFile, std::string("field '") + key + "' must be a list of strings");
      out.push_back(item.get<std::string>());
    }
    return out;
  }

  FieldReader sub(const char* key, bool required) const {
    static const json kEmpty = json::object();
    const json* v = get(key);
    if (!v) {
      if (required) fail(RegistryError::Kind::MissingField, std::string("missing section '") + key + "'");
      return {kEmpty, file, where + "." + key};
    }
    if (!v->is_object()) fail(RegistryError::Kind::MalformedFile, std::string("section '") + key + "' must be an object");
    return {*v, file, where + "." + key};
  }
};

inline std::optional<EraOverride> parse_era_override(const FieldReader& parent) {
  if (!parent.get("era")) return std::nullopt;
  FieldReader r = parent.sub("era", false);
  EraOverride e{r.opt_str("builder"), r.opt_str("runtime")};
  if ((e.builder_base && e.builder_base->empty()) || (e.runtime_base && e.runtime_base->empty()))
    r.fail(RegistryError::Kind::MalformedFile, "era bases must be non-empty");
  return e;
}

inline SolverEntry parse_entry(const json& j, const std::string& set_id, const fs::path& file, std::size_t index) {
  FieldReader r{j, file, "entry #" + std::to_string(index + 1)};
  if (!j.is_object()) r.fail(RegistryError::Kind::MalformedFile, "entry must be an object");

  SolverEntry e;
  e.origin = file;
  e.spec.name = to_lower(r.str("name"));
  r.where = "entry '" + e.spec.name + "'";
  e.spec.version = to_lower(r.opt_str("version").value_or(set_id));
  if (!valid_identifier(e.spec.name) || !valid_identifier(e.spec.version))
    r.fail(RegistryError::Kind::MalformedFile, "name and version must match [a-z0-9._-]+");
  r.where = e.spec.str();

  FieldReader src = r.sub("source", true);
  e.source.url = src.str("url");
  if (e.source.url.empty()) src.fail(RegistryError::Kind::MalformedFile, "url must be non-empty");
  e.source.sha256 = to_lower(src.str("sha256"));
  if (!is_sha256_hex(e.source.sha256)) src.fail(RegistryError::Kind::MalformedFile, "sha256 must be 64 hex characters");
  std::string kind = src.opt_str("kind").value_or("source-archive");
  if (kind == "source-archive") e.source.kind = SourceKind::SourceArchive;
  else if (kind == "binary-archive") e.source.kind = SourceKind::BinaryArchive;
  else src.fail(RegistryError::Kind::MalformedFile, "kind must be source-archive or binary-archive");
  e.source.doi = src.opt_str("doi");

  FieldReader build = r.sub("build", false);
  e.build.commands = build.str_list("commands");
  e.build.artifact = build.opt_str("artifact").value_or("");
  e.build.builder_image = build.opt_str("builder_image");
  for (const auto& cmd : e.build.commands)
    if (cmd.find_first_of("\r\n") != std::string::npos) build.fail(RegistryError::Kind::MalformedFile, "build commands must be single lines");
  if (e.source.kind == SourceKind::BinaryArchive && !e.build.commands.empty())
    build.fail(RegistryError::Kind::MalformedFile, "binary-archive entries take no build commands");

  FieldReader run = r.sub("run", true);
  e.run.command_template = run.str("command");
  e.run.options = run.str_list("options");
  if (const json* p = run.get("proof")) {
    if (!p->is_boolean()) run.fail(RegistryError::Kind::MalformedFile, "field 'proof' must be a boolean");
    e.run.proof_capable = p->get<bool>();
  } else {
    e.run.proof_capable = e.run.command_template.find(kProofPlaceholder) != std::string::npos;
  }
  if (auto why = placeholder_violation(e.run)) run.fail(RegistryError::Kind::BadPlaceholder, *why);

  if (const json* m = r.get("meta")) {
    if (!m->is_object()) r.fail(RegistryError::Kind::MalformedFile, "meta must be an object");
    for (const auto& [k, v] : m->items()) e.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  e.era = parse_era_override(r);
  return e;
}

}  // namespace detail

/// Parses an era table: {"<token>": {"builder": ..., "runtime": ...}, ...}.
inline std::map<std::string, EraConfig> parse_era_table(const json& j, const fs::path& file = {}) {
  std::map<std::string, EraConfig> table;
  if (!j.is_object()) throw RegistryError(RegistryError::Kind::MalformedFile, "era table must be an object", file);
  for (const auto& [token, val] : j.items()) {
    detail::FieldReader r{val, file, "era '" + token + "'"};
    if (!val.is_object()) r.fail(RegistryError::Kind::MalformedFile, "must be an object");
    EraConfig e{to_lower(token), r.str("builder"), r.str("runtime")};
    if (e.builder_base.empty() || e.runtime_base.empty()) r.fail(RegistryError::Kind::MalformedFile, "bases must be non-empty");
    table[e.version_token] = e;
  }
  return table;
}

inline std::map<std::string, EraConfig> default_era_table() { return parse_era_table(json::parse(kDefaultErasJson)); }

/// Loads and validates a registry directory.
inline Registry load_registry(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw RegistryError(RegistryError::Kind::Unreadable, "registry root is not a readable directory", root);

  std::map<std::string, EraConfig> eras =
      fs::exists(root / "eras.json") ? parse_era_table(detail::read_json(root / "eras.json"), root / "eras.json") : default_era_table();

  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(root)) {
    std::string fname = d.path().filename().string();
    if (d.is_directory() && !fname.empty() && fname.front() != '.') dirs.push_back(d.path());
  }
  std::sort(dirs.begin(), dirs.end());

  std::vector<SolverSet> sets;
  std::map<SolverSpec, fs::path> seen;
  for (const fs::path& dir : dirs) {
    const fs::path setup_file = dir / "setup.json";
    const fs::path solvers_file = dir / "solvers.json";
    bool has_setup = fs::exists(setup_file), has_solvers = fs::exists(solvers_file);
    if (!has_setup && !has_solvers) continue;
    if (!has_solvers) throw RegistryError(RegistryError::Kind::MissingField, "set has setup.json but no solvers.json", dir);

    SolverSet set;
    set.set_id = to_lower(dir.filename().string());
    set.origin = dir;
    json defaults = json::object();
    if (has_setup) {
      json setup = detail::read_json(setup_file);
      detail::FieldReader r{setup, setup_file, "setup"};
      if (!setup.is_object()) r.fail(RegistryError::Kind::MalformedFile, "setup.json must be an object");
      set.era = detail::parse_era_override(r);
      if (const json* d = r.get("defaults")) {
        if (!d->is_object()) r.fail(RegistryError::Kind::MalformedFile, "defaults must be an object");
        defaults = *d;
      }
    }

    json list = detail::read_json(solvers_file);
    if (!list.is_array()) throw RegistryError(RegistryError::Kind::MalformedFile, "solvers.json must be a list of entries", solvers_file, 1);
    for (std::size_t i = 0; i < list.size(); ++i) {
      json merged = defaults;
      if (list[i].is_object()) merged.merge_patch(list[i]);
      else merged = list[i];
      SolverEntry entry = detail::parse_entry(merged, set.set_id, solvers_file, i);
      auto [it, inserted] = seen.emplace(entry.spec, solvers_file);
      if (!inserted)
        throw RegistryError(RegistryError::Kind::DuplicateSpec,
                            entry.spec.str() + " declared in both " + it->second.string() + " and " + solvers_file.string(),
                            solvers_file);
      set.entries.push_back(std::move(entry));
    }
    sets.push_back(std::move(set));
  }
  return Registry(std::move(sets), std::move(eras));
}

// ---------------------------------------------------------------------------
// Queries

/// Selects specs by `NAMEGLOB[:VERSIONGLOB]`, sorted and duplicate-free.
inline std::vector<SolverSpec> resolve(const Registry& registry, std::string_view pattern) {
  std::string pat = to_lower(pattern);
  auto colon = pat.find(':');
  std::string name_glob = pat.substr(0, colon);
  std::string version_glob = colon == std::string::npos ? "*" : pat.substr(colon + 1);
  std::vector<SolverSpec> out;
  for (const SolverSpec& s : registry.specs())
    if (glob_match(name_glob, s.name) && glob_match(version_glob, s.version)) out.push_back(s);
  if (out.empty()) throw RegistryError(RegistryError::Kind::NoMatch, "no solver matches '" + std::string(pattern) + "'");
  return out;
}

}  // namespace satex
