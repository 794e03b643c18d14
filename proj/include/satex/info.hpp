#pragma once

#include <optional>
#include <string>

#include "satex/recipes.hpp"
#include "satex/registry.hpp"

namespace satex {

/// Everything `satex info` shows about one entry, derived from registry data.
struct InfoReport {
  SolverSpec spec;
  std::string image;
  std::string set_id;
  SourceRef source;
  std::optional<std::string> doi;
  std::optional<EraConfig> era;
  /// Why `era` is missing.
  std::optional<std::string> era_error;
  std::string executable;
  bool proof_capable = false;
  std::string command;
  std::optional<std::string> proof_command;
  std::map<std::string, std::string> meta;
  fs::path origin;
};

/// Sample arguments used when rendering the run commands.
inline constexpr std::string_view kSampleInput = "file.cnf";
inline constexpr std::string_view kSampleProof = "proof";

inline InfoReport info(const Registry& registry, const SolverSpec& spec) {
  const SolverEntry& e = registry.at(spec);
  InfoReport r;
  r.spec = spec;
  r.image = image_name(spec);
  r.set_id = registry.set_of(spec).set_id;
  r.source = e.source;
  r.doi = e.doi();
  try {
    r.era = era_for(registry, spec);
  } catch (const RegistryError& err) {
    r.era_error = err.what();
  }
  r.executable = executable_name(e.run);
  r.proof_capable = e.run.proof_capable;
  r.command = join_command(render_command(e.run, kSampleInput));
  if (e.run.proof_capable) r.proof_command = join_command(render_command(e.run, kSampleInput, kSampleProof));
  r.meta = e.meta;
  r.origin = e.origin;
  return r;
}

/// Key order is fixed (insertion order), so the output is stable.
inline nlohmann::ordered_json to_ordered_json(const InfoReport& r) {
  nlohmann::ordered_json j;
  j["spec"] = r.spec.str();
  j["name"] = r.spec.name;
  j["version"] = r.spec.version;
  j["image"] = r.image;
  j["set"] = r.set_id;
  j["source"] = {{"url", r.source.url}, {"sha256", r.source.sha256}, {"kind", std::string(to_string(r.source.kind))}};
  j["doi"] = r.doi ? nlohmann::ordered_json(*r.doi) : nlohmann::ordered_json(nullptr);
  if (r.era)
    j["era"] = {{"version_token", r.era->version_token}, {"builder", r.era->builder_base}, {"runtime", r.era->runtime_base}};
  else
    j["era"] = nullptr;
  j["executable"] = r.executable;
  j["proof_capable"] = r.proof_capable;
  j["run"] = {{"command", r.command},
              {"proof_command", r.proof_command ? nlohmann::ordered_json(*r.proof_command) : nlohmann::ordered_json(nullptr)}};
  j["meta"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.meta) j["meta"][k] = v;
  return j;
}

inline std::string render_info(const InfoReport& r) {
  std::string out;
  auto line = [&](std::string_view key, const std::string& value) {
    out += std::string(key) + ":" + std::string(16 - std::min<std::size_t>(key.size(), 15), ' ') + value + "\n";
  };
  line("solver", r.spec.str());
  line("image", r.image);
  line("set", r.set_id);
  line("source", r.source.url);
  line("sha256", r.source.sha256);
  line("kind", std::string(to_string(r.source.kind)));
  if (r.doi) line("doi", *r.doi);
  if (r.era) {
    line("builder", r.era->builder_base);
    line("runtime", r.era->runtime_base);
  } else {
    line("era", "unresolved (" + r.era_error.value_or("?") + ")");
  }
  line("run", r.command);
  line("run with proof", r.proof_command.value_or("(no proof support)"));
  for (const auto& [k, v] : r.meta)
    if (k != "doi") line(k, v);
  return out;
}

}  // namespace satex
