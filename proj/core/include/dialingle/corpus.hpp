#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialingle/clock.hpp"
#include "dialingle/geo.hpp"

namespace dialingle {

enum class Provenance { Seed, User };

std::string_view to_string(Provenance p);

/// A dialect. `name` and `affiliation` are fixed at creation; only the
/// region changes, and only through geo edits.
struct DialectLabel {
  std::string label_id;
  std::string name;
  std::string affiliation;
  HexRegion region;
};

struct DialectVariant {
  std::string variant_id;
  std::string text;
  /// Sorted, unique, non-empty.
  std::vector<std::string> labels;
  Provenance provenance = Provenance::Seed;
  Timestamp created_at = 0;

  bool has_label(std::string_view label) const;
};

/// A standard sentence together with its dialect rewrites.
struct ParallelGroup {
  std::string group_id;
  std::string family_id;
  std::string standard_text;
  std::vector<DialectVariant> variants;

  /// Labels occurring in the variants (the set C for this group).
  std::set<std::string> observed_labels() const;
  std::vector<const DialectVariant*> variants_with_label(std::string_view label) const;
};

enum class FeedbackKind { Confirm, Relabel, NewDialect, GeoEdit, MatchCorrection };

std::string_view to_string(FeedbackKind kind);
FeedbackKind parse_feedback_kind(std::string_view text);

struct FeedbackEvent {
  std::uint64_t event_id = 0;
  std::string session_id;
  FeedbackKind kind = FeedbackKind::Confirm;
  nlohmann::json payload;
  Timestamp created_at = 0;

  nlohmann::json to_json() const;
  static FeedbackEvent from_json(const nlohmann::json& j);
};

/// What a caller submits to record_event. Payload shapes per kind:
///   CONFIRM          {group_id, text, labels: [..]}
///   RELABEL          {group_id, text, label}
///   NEW_DIALECT      {group_id, text, name}
///   GEO_EDIT         {label_id, add: ["q:r",..], remove: ["q:r",..]}
///   MATCH_CORRECTION {variant_id, divisions: [..]}
/// The stored payload is annotated with the ids the event produced.
struct EventDraft {
  std::string session_id;
  FeedbackKind kind = FeedbackKind::Confirm;
  nlohmann::json payload;
};

struct RecordedEvent {
  std::uint64_t event_id = 0;
  nlohmann::json payload;
};

/// Immutable view of one family's corpus and registry.
struct FamilySnapshot {
  LanguageFamily family;
  std::map<std::string, DialectLabel> labels;
  std::vector<std::shared_ptr<const ParallelGroup>> groups;
  std::map<std::string, std::size_t, std::less<>> group_index;
  std::vector<AdminDivision> divisions;
  /// K: every registered label plus every label used by a variant.
  std::set<std::string> label_set;
  std::uint64_t revision = 0;
  /// Number of groups that came from seed files.
  std::size_t seed_group_count = 0;

  const ParallelGroup* find_group(std::string_view group_id) const;
  const DialectLabel* find_label(std::string_view label_id) const;
  std::size_t variant_count() const;

  /// Canonical JSON form; equal snapshots dump to identical bytes.
  nlohmann::json to_json() const;
};

using CorpusView = std::shared_ptr<const FamilySnapshot>;

/// Contents of a registry file.
struct Registry {
  LanguageFamily family;
  std::vector<DialectLabel> labels;

  static Registry from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct AddResult {
  std::string variant_id;
  /// False when an identical variant (same text and labels) already existed.
  bool added = false;
};

struct CorpusChange {
  std::string family_id;
  std::string group_id;
  std::string variant_id;
  bool label_set_grew = false;
  std::uint64_t revision = 0;
};

/// Dialect registry plus parallel corpus. Mutations are serialized through a
/// single writer; readers take immutable snapshots.
///
/// A store opened on a data directory persists seed files (registry, corpus,
/// divisions per family), a session list and the append-only event log, and
/// rebuilds itself from them on open. Only record_event (and geo edits, which
/// go through it) are journaled; add_variant alone is an in-memory operation.
class CorpusStore {
 public:
  explicit CorpusStore(const Clock& clock);
  CorpusStore(const Clock& clock, std::filesystem::path data_dir, bool fsync_events = true);

  CorpusStore(const CorpusStore&) = delete;
  CorpusStore& operator=(const CorpusStore&) = delete;

  void register_family(const Registry& registry);
  void set_divisions(const std::string& family_id, std::vector<AdminDivision> divisions);

  /// Loads line-delimited group records. The whole file is validated before
  /// anything is written.
  std::size_t ingest_corpus(const std::filesystem::path& path, const std::string& family_id);
  std::size_t ingest_stream(std::istream& in, const std::string& family_id);

  AddResult add_variant(const std::string& group_id, std::string_view text, const std::vector<std::string>& labels,
                        Provenance provenance);

  void open_session(const std::string& session_id, const std::string& family_id);
  bool has_session(const std::string& session_id) const;

  RecordedEvent record_event(const EventDraft& draft);

  /// Records a GEO_EDIT for the session and returns the updated region.
  HexRegion apply_geo_edit(const std::string& session_id, const std::string& label_id, const CellSet& add,
                           const CellSet& remove);

  CorpusView snapshot(const std::string& family_id) const;
  std::vector<LanguageFamily> families() const;
  bool has_family(const std::string& family_id) const;
  std::vector<FeedbackEvent> events() const;
  std::uint64_t last_event_id() const;

  void subscribe(std::function<void(const CorpusChange&)> listener);

  /// Every family snapshot, canonical and sorted by family id.
  std::string canonical_dump() const;

  /// Writes the full state to snapshot.json so that the next open only
  /// replays events recorded afterwards. No-op for in-memory stores.
  void compact();

  const std::filesystem::path& data_dir() const { return data_dir_; }

 private:
  std::shared_ptr<FamilySnapshot> clone_family(const std::string& family_id) const;
  void publish(std::shared_ptr<FamilySnapshot> next);
  RecordedEvent apply_event(const FeedbackEvent& event, bool replaying, std::shared_ptr<FamilySnapshot>& next,
                            std::vector<CorpusChange>& changes);
  void append_line(const std::filesystem::path& file, const std::string& line, bool sync);
  void load();
  void notify(const std::vector<CorpusChange>& changes);
  std::string session_family(const std::string& session_id) const;

  const Clock& clock_;
  std::filesystem::path data_dir_;
  bool persistent_ = false;
  bool fsync_events_ = true;

  std::mutex writer_;
  mutable std::shared_mutex state_mu_;
  std::map<std::string, std::shared_ptr<const FamilySnapshot>> families_;
  std::map<std::string, std::string> group_family_;
  std::map<std::string, std::string> sessions_;
  std::vector<FeedbackEvent> events_;
  std::vector<std::function<void(const CorpusChange&)>> listeners_;
};

nlohmann::json read_json_file(const std::filesystem::path& file);
Registry load_registry(const std::filesystem::path& file);
/// Reads {"divisions": [...]}.
std::vector<AdminDivision> load_divisions(const std::filesystem::path& file);

/// Lower-case ASCII slug used for generated label ids.
std::string slugify(std::string_view name);

}  // namespace dialingle
