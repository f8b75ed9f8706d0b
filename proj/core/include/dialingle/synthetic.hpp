#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialingle/corpus.hpp"

namespace dialingle {

/// Replace `from` with `to`, each occurrence independently with `probability`.
struct SubstitutionRule {
  std::string from;
  std::string to;
  double probability = 1.0;
};

/// A pseudo-dialect speaker: rewrites a standard sentence by substitution
/// rules and sprinkles in filler words.
struct Speaker {
  std::string label_id;
  std::vector<SubstitutionRule> rules;
};

struct SpeakerSet {
  std::string family_id;
  std::vector<Speaker> speakers;
  /// Dialect-neutral filler words inserted by `speak`.
  std::vector<std::string> fillers;

  const Speaker& speaker(std::string_view label_id) const;
  nlohmann::json to_json() const;
  static SpeakerSet from_json(const nlohmann::json& j);
  static SpeakerSet load(const std::filesystem::path& path);
};

/// Single left-to-right pass; at each position the first matching rule wins
/// and its coin decides between replacement and copying. Replaced text is
/// never rescanned.
std::string apply_rules(std::string_view text, const std::vector<SubstitutionRule>& rules, std::mt19937_64& rng);

/// Rules plus exactly `fillers` filler words at random word boundaries.
std::string speak(std::string_view standard, const Speaker& speaker, const std::vector<std::string>& filler_words,
                  int fillers, std::mt19937_64& rng);

enum class Script { Latin, Hebrew };

struct SyntheticSpec {
  std::string family_id;
  std::string display_name;
  BoundingBox bounding_box;
  double hex_resolution = 0.1;
  WritingDirection writing_direction = WritingDirection::LTR;
  Script script = Script::Latin;
  std::vector<std::string> dialect_names;
  /// Groups with dialect variants.
  std::size_t seeded_groups = 0;
  /// Dialects written per seeded group; 0 means all of them.
  std::size_t variants_per_group = 0;
  /// Groups with a standard sentence only.
  std::size_t standard_only_groups = 0;
  /// Held-out groups, one variant per dialect, written like user rewrites.
  std::size_t heldout_groups = 0;
  /// Disjoint rules always fire; otherwise dialects draw overlapping rules
  /// from a shared pool and each fires with `rule_probability`.
  bool disjoint_rules = true;
  std::size_t rules_per_dialect = 3;
  double rule_probability = 1.0;
  std::size_t vocabulary_size = 300;
  int division_columns = 3;
  int division_rows = 2;
  std::uint64_t seed = 1;
};

struct SyntheticFamily {
  Registry registry;
  std::vector<AdminDivision> divisions;
  /// Ingest-format records.
  std::vector<nlohmann::json> corpus;
  std::vector<nlohmann::json> heldout;
  SpeakerSet speakers;
};

SyntheticFamily generate_family(const SyntheticSpec& spec);

/// The three bundled families: 3 disjoint dialects, 8 overlapping dialects
/// with a thin seed corpus, and a 2-dialect right-to-left family.
std::vector<SyntheticSpec> bundled_specs();

/// Writes registry.json, corpus.jsonl, divisions.json, heldout.jsonl and
/// speakers.json into `dir`.
void write_family(const SyntheticFamily& family, const std::filesystem::path& dir);

}  // namespace dialingle
