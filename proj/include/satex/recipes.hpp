#pragma once

// Container build recipes (Dockerfile text) and the unified run wrapper
// installed in every image. Output is canonical: fixed instruction order,
// LF line endings, nothing that depends on the host or the clock.

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "satex/registry.hpp"

namespace satex {

class RecipeError : public std::runtime_error {
 public:
  enum class Kind { MissingArtifactPath, EmptyBuildCommands };

  RecipeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Bumped whenever the recipe or wrapper layout changes; part of every digest.
inline constexpr std::string_view kRecipeFormat = "satex-recipe/1";

inline constexpr std::string_view kWrapperName = "satex-wrapper";
inline constexpr std::string_view kInstallDir = "/usr/local/bin";
inline constexpr std::string_view kDigestLabel = "org.satex.inputs-digest";
inline constexpr std::string_view kSpecLabel = "org.satex.spec";

/// Era resolution for one entry: entry override, then set override, then the
/// era table keyed by version token. `build.builder_image` overrides the
/// builder base last.
inline EraConfig era_for(const SolverEntry& entry, const std::optional<EraOverride>& set_override,
                         const std::map<std::string, EraConfig>& table) {
  std::optional<std::string> builder, runtime;
  if (auto it = table.find(entry.spec.version); it != table.end()) {
    builder = it->second.builder_base;
    runtime = it->second.runtime_base;
  }
  for (const auto* o : {&set_override, &entry.era}) {
    if (!*o) continue;
    if ((*o)->builder_base) builder = (*o)->builder_base;
    if ((*o)->runtime_base) runtime = (*o)->runtime_base;
  }
  if (entry.build.builder_image) builder = entry.build.builder_image;
  if (!builder || !runtime)
    throw RegistryError(RegistryError::Kind::NoEraConfigured,
                        "no era configured for version '" + entry.spec.version + "' of " + entry.spec.str(), entry.origin);
  return EraConfig{entry.spec.version, *builder, *runtime};
}

inline EraConfig era_for(const Registry& registry, const SolverSpec& spec) {
  return era_for(registry.at(spec), registry.set_of(spec).era, registry.era_table());
}

// ---------------------------------------------------------------------------
// Wrapper

namespace detail {

/// POSIX single-quoting; the result is never subject to expansion.
inline std::string sh_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  out += "'";
  return out;
}

/// Renders one template token as shell words: literal text single-quoted,
/// placeholders as double-quoted variable references.
inline std::string sh_token(std::string_view tok) {
  std::string out, literal;
  auto flush = [&] {
    if (!literal.empty()) out += sh_quote(literal);
    literal.clear();
  };
  for (std::size_t i = 0; i < tok.size();) {
    if (tok.substr(i, kInputPlaceholder.size()) == kInputPlaceholder) {
      flush();
      out += "\"$satex_input\"";
      i += kInputPlaceholder.size();
    } else if (tok.substr(i, kProofPlaceholder.size()) == kProofPlaceholder) {
      flush();
      out += "\"$satex_proof\"";
      i += kProofPlaceholder.size();
    } else {
      literal += tok[i++];
    }
  }
  flush();
  return out;
}

inline std::string wrapper_command(const RunConfig& run, bool with_proof) {
  auto tokens = split_ws(run.command_template);
  std::string out = sh_quote(executable_name(run));
  for (const auto& opt : run.options) out += " " + sh_quote(opt);
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (!with_proof && tokens[i].find(kProofPlaceholder) != std::string::npos) continue;
    out += " " + sh_token(tokens[i]);
  }
  return out;
}

}  // namespace detail

/// The unified entry point of an image: `satex-wrapper FILE.cnf[.gz] [PROOF]`.
/// The solver's stdout is passed through and its verdict is turned into the
/// normalized exit code (10 SAT, 20 UNSAT, 0 unknown, 1 otherwise).
inline std::string generate_run_wrapper(const SolverEntry& entry) {
  std::string w;
  w += "#!/bin/sh\n";
  w += "# satex unified wrapper for " + entry.spec.str() + " (generated, do not edit)\n";
  w += "# usage: satex-wrapper FILE.cnf[.gz] [PROOF]\n";
  w += "# exit: 10 SAT, 20 UNSAT, 0 UNKNOWN, 1 otherwise\n";
  w += "if [ $# -lt 1 ] || [ $# -gt 2 ]; then\n";
  w += "  echo \"usage: satex-wrapper FILE.cnf[.gz] [PROOF]\" >&2\n";
  w += "  exit 1\n";
  w += "fi\n";
  w += "satex_tmp=\"${TMPDIR:-/tmp}/satex-wrapper.$$\"\n";
  w += "rm -rf \"$satex_tmp\"\n";
  w += "mkdir \"$satex_tmp\" || exit 1\n";
  w += "trap 'rm -rf \"$satex_tmp\"' 0\n";
  w += "trap 'exit 1' 1 2 15\n";
  w += "satex_input=$1\n";
  w += "case \"$satex_input\" in\n";
  w += "  *.gz)\n";
  w += "    gzip -dc < \"$satex_input\" > \"$satex_tmp/input.cnf\" || exit 1\n";
  w += "    satex_input=\"$satex_tmp/input.cnf\"\n";
  w += "    ;;\n";
  w += "esac\n";
  if (entry.run.proof_capable) {
    w += "if [ $# -eq 2 ]; then\n";
    w += "  satex_proof=$2\n";
    w += "  " + detail::wrapper_command(entry.run, true) + " > \"$satex_tmp/stdout\"\n";
    w += "else\n";
    w += "  " + detail::wrapper_command(entry.run, false) + " > \"$satex_tmp/stdout\"\n";
    w += "fi\n";
  } else {
    w += "if [ $# -eq 2 ]; then\n";
    w += "  echo \"satex-wrapper: " + entry.spec.str() + " cannot produce proofs\" >&2\n";
    w += "fi\n";
    w += detail::wrapper_command(entry.run, false) + " > \"$satex_tmp/stdout\"\n";
  }
  w += "satex_rc=$?\n";
  w += "cat \"$satex_tmp/stdout\"\n";
  w += "satex_status=`sed -n 's/^s[ \t][ \t]*//p' \"$satex_tmp/stdout\" | sed -n '$p'`\n";
  w += "case \"$satex_status\" in\n";
  w += "  SATISFIABLE*) exit 10 ;;\n";
  w += "  UNSATISFIABLE*) exit 20 ;;\n";
  w += "esac\n";
  w += "case \"$satex_rc\" in\n";
  w += "  0|10|20) exit $satex_rc ;;\n";
  w += "esac\n";
  w += "exit 1\n";
  return w;
}

// ---------------------------------------------------------------------------
// Build recipes

struct BuildRecipe {
  SolverSpec spec;
  std::string text;
  int stage_count = 0;
  /// `sha256:<hex>` over the entry, its era and the recipe format version.
  std::string inputs_digest;
  /// Extra files for the build context (name -> contents).
  std::map<std::string, std::string> context_files;
};

inline std::string recipe_inputs_digest(const SolverEntry& entry, const EraConfig& era) {
  json j;
  j["format"] = kRecipeFormat;
  j["entry"] = to_json(entry);
  j["era"] = {{"token", era.version_token}, {"builder", era.builder_base}, {"runtime", era.runtime_base}};
  return "sha256:" + sha256_hex(j.dump());
}

namespace detail {

inline std::string archive_filename(std::string_view url) {
  std::string_view u = url.substr(0, url.find_first_of("?#"));
  while (!u.empty() && u.back() == '/') u.remove_suffix(1);
  auto slash = u.rfind('/');
  std::string name(slash == std::string_view::npos ? u : u.substr(slash + 1));
  bool ok = !name.empty() && name != "." && name != "..";
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-' || c == '+')) ok = false;
  return ok ? name : "source.archive";
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

/// Shell command unpacking /satex/src/<file> into the current directory.
inline std::string unpack_command(const std::string& file) {
  const std::string src = sh_quote("/satex/src/" + file);
  if (ends_with(file, ".tar.gz") || ends_with(file, ".tgz")) return "gzip -dc " + src + " | tar -xf -";
  if (ends_with(file, ".tar.bz2") || ends_with(file, ".tbz2")) return "bzip2 -dc " + src + " | tar -xf -";
  if (ends_with(file, ".tar.xz") || ends_with(file, ".txz")) return "xz -dc " + src + " | tar -xf -";
  if (ends_with(file, ".tar")) return "tar -xf " + src;
  if (ends_with(file, ".zip")) return "unzip -q " + src;
  if (ends_with(file, ".gz")) return "gzip -dc " + src + " > " + sh_quote(file.substr(0, file.size() - 3));
  return "cp " + src + " .";
}

inline std::string dockerfile_path(std::string_view p) {
  // Dockerfile COPY/ADD arguments are whitespace separated; the JSON form
  // handles anything else.
  return json(std::string(p)).dump();
}

}  // namespace detail

/// How the archive enters the builder: fetched from its URL by the build, or
/// copied from the build context (pre-verified local cache, no network).
enum class SourceDelivery { Url, BuildContext };

/// Build-context file name of the archive in BuildContext mode.
inline std::string recipe_context_source_name(const SolverEntry& entry) {
  return "satex-src-" + detail::archive_filename(entry.source.url);
}

/// Produces the Dockerfile for one entry. Source archives get a builder stage
/// and a runtime stage; binary archives a single runtime stage. The archive
/// checksum is verified by the build itself (ADD --checksum).
inline BuildRecipe generate_build_recipe(const SolverEntry& entry, const EraConfig& era,
                                         SourceDelivery delivery = SourceDelivery::Url) {
  if (entry.build.artifact.empty())
    throw RecipeError(RecipeError::Kind::MissingArtifactPath, entry.spec.str() + ": build.artifact is not set");
  const bool from_source = entry.source.kind == SourceKind::SourceArchive;
  if (from_source && entry.build.commands.empty())
    throw RecipeError(RecipeError::Kind::EmptyBuildCommands, entry.spec.str() + ": source archive without build commands");

  BuildRecipe r;
  r.spec = entry.spec;
  r.stage_count = from_source ? 2 : 1;
  r.inputs_digest = recipe_inputs_digest(entry, era);
  r.context_files[std::string(kWrapperName)] = generate_run_wrapper(entry);

  const std::string file = detail::archive_filename(entry.source.url);
  const std::string exe = std::string(kInstallDir) + "/" + executable_name(entry.run);
  const std::string wrapper = std::string(kInstallDir) + "/" + std::string(kWrapperName);
  const std::string artifact = "/satex/build/" + entry.build.artifact;

  std::string t;
  t += "# syntax=docker/dockerfile:1.7\n";
  t += "# satex build recipe for " + entry.spec.str() + " (generated, do not edit)\n";
  t += "# inputs-digest: " + r.inputs_digest + "\n";
  auto fetch = [&] {
    if (delivery == SourceDelivery::Url)
      t += "ADD --checksum=sha256:" + entry.source.sha256 + " " + entry.source.url + " /satex/src/" + file + "\n";
    else
      t += "COPY [" + detail::dockerfile_path(recipe_context_source_name(entry)) + ", " +
           detail::dockerfile_path("/satex/src/" + file) + "]\n";
    t += "WORKDIR /satex/build\n";
    t += "RUN " + detail::unpack_command(file) + "\n";
  };
  if (from_source) {
    t += "FROM " + era.builder_base + " AS builder\n";
    fetch();
    for (const auto& cmd : entry.build.commands) t += "RUN " + cmd + "\n";
    t += "FROM " + era.runtime_base + "\n";
    t += "COPY --from=builder [" + detail::dockerfile_path(artifact) + ", " + detail::dockerfile_path(exe) + "]\n";
  } else {
    t += "FROM " + era.runtime_base + "\n";
    fetch();
    t += "RUN cp " + detail::sh_quote(artifact) + " " + detail::sh_quote(exe) + " && chmod 755 " + detail::sh_quote(exe) +
         " && cd / && rm -rf /satex\n";
    t += "WORKDIR /\n";
  }
  t += "COPY [" + detail::dockerfile_path(std::string(kWrapperName)) + ", " + detail::dockerfile_path(wrapper) + "]\n";
  t += "LABEL " + std::string(kSpecLabel) + "=\"" + entry.spec.str() + "\" " + std::string(kDigestLabel) + "=\"" +
       r.inputs_digest + "\"\n";
  t += "ENTRYPOINT [" + detail::dockerfile_path(wrapper) + "]\n";
  r.text = std::move(t);
  return r;
}

inline BuildRecipe generate_build_recipe(const Registry& registry, const SolverSpec& spec) {
  return generate_build_recipe(registry.at(spec), era_for(registry, spec));
}

}  // namespace satex
