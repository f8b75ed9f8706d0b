#include "dialingle/corpus.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "dialingle/error.hpp"
#include "dialingle/text.hpp"

namespace dialingle {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kEventsFile = "events.jsonl";
constexpr const char* kSessionsFile = "sessions.jsonl";
constexpr const char* kSnapshotFile = "snapshot.json";

fs::path family_dir(const fs::path& root, const std::string& family_id) { return root / "families" / family_id; }

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

json variant_to_json(const DialectVariant& v) {
  return {{"variant_id", v.variant_id},
          {"text", v.text},
          {"labels", v.labels},
          {"provenance", to_string(v.provenance)},
          {"created_at", v.created_at}};
}

json label_to_json(const DialectLabel& l) {
  return {{"label_id", l.label_id}, {"name", l.name}, {"affiliation", l.affiliation}, {"region", region_ids(l.region.cells)}};
}

DialectLabel label_from_json(const json& j) {
  DialectLabel l;
  l.label_id = j.at("label_id").get<std::string>();
  l.name = normalize_text(j.at("name").get<std::string>());
  l.affiliation = j.at("affiliation").get<std::string>();
  l.region.family_id = l.affiliation;
  l.region.cells = parse_region_ids(j.value("region", std::vector<std::string>{}));
  if (l.label_id.empty() || l.name.empty()) fail(ErrorCode::MalformedRecord, "label needs non-empty label_id and name");
  return l;
}

std::string variant_id_for(const ParallelGroup& group) {
  return group.group_id + "#" + std::to_string(group.variants.size() + 1);
}

json string_field(const json& payload, const char* key) {
  if (!payload.is_object() || !payload.contains(key) || !payload.at(key).is_string())
    fail(ErrorCode::InvalidPayload, std::string("payload needs string field '") + key + "'");
  return payload.at(key);
}

std::vector<std::string> string_list_field(const json& payload, const char* key, bool required) {
  if (!payload.is_object() || !payload.contains(key)) {
    if (required) fail(ErrorCode::InvalidPayload, std::string("payload needs list field '") + key + "'");
    return {};
  }
  const auto& arr = payload.at(key);
  if (!arr.is_array()) fail(ErrorCode::InvalidPayload, std::string("payload field '") + key + "' must be a list");
  std::vector<std::string> out;
  for (const auto& item : arr) {
    if (!item.is_string()) fail(ErrorCode::InvalidPayload, std::string("payload field '") + key + "' must hold strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

CellSet cells_field(const json& payload, const char* key) {
  try {
    return parse_region_ids(string_list_field(payload, key, false));
  } catch (const Error& e) {
    fail(ErrorCode::InvalidPayload, e.what());
  }
}

// Adds a variant to `fam`, cloning only the touched group.
AddResult add_variant_to(FamilySnapshot& fam, std::string_view group_id, const std::string& text,
                         const std::vector<std::string>& labels, Provenance provenance, Timestamp created_at,
                         bool& label_set_grew) {
  auto it = fam.group_index.find(group_id);
  if (it == fam.group_index.end()) fail(ErrorCode::UnknownGroup, "unknown group '" + std::string(group_id) + "'");
  if (text.empty()) fail(ErrorCode::EmptyText, "variant text is empty");
  if (labels.empty()) fail(ErrorCode::UnknownLabel, "variant needs at least one label");
  for (const auto& l : labels) {
    if (!fam.labels.count(l))
      fail(ErrorCode::UnknownLabel, "label '" + l + "' is not registered in family " + fam.family.family_id);
  }
  const auto& current = *fam.groups[it->second];
  for (const auto& v : current.variants) {
    if (v.text == text && v.labels == labels) return {v.variant_id, false};
  }
  auto group = std::make_shared<ParallelGroup>(current);
  DialectVariant v;
  v.variant_id = variant_id_for(*group);
  v.text = text;
  v.labels = labels;
  v.provenance = provenance;
  v.created_at = created_at;
  group->variants.push_back(v);
  for (const auto& l : labels) label_set_grew |= fam.label_set.insert(l).second;
  fam.groups[it->second] = std::move(group);
  return {v.variant_id, true};
}

FamilySnapshot snapshot_from_json(const json& j) {
  FamilySnapshot fam;
  fam.family = family_from_json(j.at("family"));
  for (const auto& l : j.at("labels")) {
    auto label = label_from_json(l);
    fam.labels.emplace(label.label_id, std::move(label));
  }
  for (const auto& g : j.at("groups")) {
    auto group = std::make_shared<ParallelGroup>();
    group->group_id = g.at("group_id").get<std::string>();
    group->family_id = fam.family.family_id;
    group->standard_text = g.at("standard").get<std::string>();
    for (const auto& vj : g.at("variants")) {
      DialectVariant v;
      v.variant_id = vj.at("variant_id").get<std::string>();
      v.text = vj.at("text").get<std::string>();
      v.labels = vj.at("labels").get<std::vector<std::string>>();
      v.provenance = vj.at("provenance").get<std::string>() == "USER" ? Provenance::User : Provenance::Seed;
      v.created_at = vj.at("created_at").get<Timestamp>();
      group->variants.push_back(std::move(v));
    }
    fam.group_index.emplace(group->group_id, fam.groups.size());
    fam.groups.push_back(std::move(group));
  }
  for (const auto& d : j.at("divisions")) fam.divisions.push_back(division_from_json(d));
  for (const auto& k : j.at("label_set")) fam.label_set.insert(k.get<std::string>());
  fam.seed_group_count = j.at("seed_group_count").get<std::size_t>();
  return fam;
}

struct ParsedGroup {
  std::string group_id;
  std::string standard;
  struct Variant {
    std::string text;
    std::vector<std::string> labels;
    Timestamp created_at = 0;
    bool has_timestamp = false;
  };
  std::vector<Variant> variants;
};

ParsedGroup parse_group_line(const std::string& line, std::size_t line_no) {
  auto malformed = [&](const std::string& why) {
    fail(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": " + why);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) malformed("record is not an object");
  ParsedGroup g;
  if (!j.contains("group_id") || !j["group_id"].is_string() || j["group_id"].get<std::string>().empty())
    malformed("missing group_id");
  g.group_id = j["group_id"].get<std::string>();
  if (!j.contains("standard") || !j["standard"].is_string()) malformed("missing standard");
  g.standard = normalize_text(j["standard"].get<std::string>());
  if (g.standard.empty()) malformed("standard text is empty");
  if (j.contains("variants")) {
    if (!j["variants"].is_array()) malformed("variants must be a list");
    for (const auto& v : j["variants"]) {
      if (!v.is_object() || !v.contains("text") || !v["text"].is_string()) malformed("variant needs text");
      if (!v.contains("labels") || !v["labels"].is_array() || v["labels"].empty())
        malformed("variant needs a non-empty labels list");
      ParsedGroup::Variant pv;
      pv.text = normalize_text(v["text"].get<std::string>());
      if (pv.text.empty()) malformed("variant text is empty");
      for (const auto& l : v["labels"]) {
        if (!l.is_string()) malformed("labels must be strings");
        pv.labels.push_back(l.get<std::string>());
      }
      pv.labels = sorted_unique(std::move(pv.labels));
      if (v.contains("created_at") && v["created_at"].is_number_integer()) {
        pv.created_at = v["created_at"].get<Timestamp>();
        pv.has_timestamp = true;
      }
      g.variants.push_back(std::move(pv));
    }
  }
  return g;
}

json group_to_seed_line(const ParallelGroup& g) {
  auto variants = json::array();
  for (const auto& v : g.variants)
    variants.push_back({{"text", v.text}, {"labels", v.labels}, {"created_at", v.created_at}});
  return {{"group_id", g.group_id}, {"standard", g.standard_text}, {"variants", variants}};
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::vector<std::string> lines;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}


void write_file_atomic(const fs::path& file, const std::string& content) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, file);
}

}  // namespace

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::Io, "cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedRecord, file.string() + ": " + e.what());
  }
}

Registry load_registry(const fs::path& file) { return Registry::from_json(read_json_file(file)); }

std::vector<AdminDivision> load_divisions(const fs::path& file) {
  const auto j = read_json_file(file);
  std::vector<AdminDivision> out;
  try {
    for (const auto& d : j.at("divisions")) out.push_back(division_from_json(d));
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedRecord, file.string() + ": " + e.what());
  }
  return out;
}

std::string_view to_string(Provenance p) { return p == Provenance::User ? "USER" : "SEED"; }

std::string_view to_string(FeedbackKind kind) {
  switch (kind) {
    case FeedbackKind::Confirm: return "CONFIRM";
    case FeedbackKind::Relabel: return "RELABEL";
    case FeedbackKind::NewDialect: return "NEW_DIALECT";
    case FeedbackKind::GeoEdit: return "GEO_EDIT";
    case FeedbackKind::MatchCorrection: return "MATCH_CORRECTION";
  }
  return "CONFIRM";
}

FeedbackKind parse_feedback_kind(std::string_view text) {
  for (auto k : {FeedbackKind::Confirm, FeedbackKind::Relabel, FeedbackKind::NewDialect, FeedbackKind::GeoEdit,
                 FeedbackKind::MatchCorrection}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorCode::InvalidPayload, "unknown event kind '" + std::string(text) + "'");
}

bool DialectVariant::has_label(std::string_view label) const {
  return std::binary_search(labels.begin(), labels.end(), label, std::less<>{});
}

std::set<std::string> ParallelGroup::observed_labels() const {
  std::set<std::string> out;
  for (const auto& v : variants) out.insert(v.labels.begin(), v.labels.end());
  return out;
}

std::vector<const DialectVariant*> ParallelGroup::variants_with_label(std::string_view label) const {
  std::vector<const DialectVariant*> out;
  for (const auto& v : variants) {
    if (v.has_label(label)) out.push_back(&v);
  }
  return out;
}

json FeedbackEvent::to_json() const {
  return {{"event_id", event_id},
          {"session_id", session_id},
          {"kind", dialingle::to_string(kind)},
          {"payload", payload},
          {"created_at", created_at}};
}

FeedbackEvent FeedbackEvent::from_json(const json& j) {
  FeedbackEvent e;
  e.event_id = j.at("event_id").get<std::uint64_t>();
  e.session_id = j.at("session_id").get<std::string>();
  e.kind = parse_feedback_kind(j.at("kind").get<std::string>());
  e.payload = j.at("payload");
  e.created_at = j.at("created_at").get<Timestamp>();
  return e;
}

const ParallelGroup* FamilySnapshot::find_group(std::string_view group_id) const {
  auto it = group_index.find(group_id);
  return it == group_index.end() ? nullptr : groups[it->second].get();
}

const DialectLabel* FamilySnapshot::find_label(std::string_view label_id) const {
  auto it = labels.find(std::string(label_id));
  return it == labels.end() ? nullptr : &it->second;
}

std::size_t FamilySnapshot::variant_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g->variants.size();
  return n;
}

json FamilySnapshot::to_json() const {
  auto label_list = json::array();
  for (const auto& [id, l] : labels) label_list.push_back(label_to_json(l));
  auto group_list = json::array();
  for (const auto& g : groups) {
    auto variants = json::array();
    for (const auto& v : g->variants) variants.push_back(variant_to_json(v));
    group_list.push_back({{"group_id", g->group_id}, {"standard", g->standard_text}, {"variants", variants}});
  }
  auto division_list = json::array();
  for (const auto& d : divisions) division_list.push_back(to_json_value(d));
  return {{"family", to_json_value(family)},
          {"labels", label_list},
          {"groups", group_list},
          {"divisions", division_list},
          {"label_set", label_set},
          {"seed_group_count", seed_group_count}};
}

Registry Registry::from_json(const json& j) {
  try {
    Registry r;
    r.family = family_from_json(j.at("family"));
    for (const auto& l : j.value("labels", json::array())) r.labels.push_back(label_from_json(l));
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedRecord, std::string("registry: ") + e.what());
  }
}

json Registry::to_json() const {
  auto labels_json = json::array();
  for (const auto& l : labels) labels_json.push_back(label_to_json(l));
  return {{"family", to_json_value(family)}, {"labels", labels_json}};
}

std::string slugify(std::string_view name) {
  std::string out;
  bool dash = false;
  for (unsigned char c : name) {
    if (std::isalnum(c) && c < 0x80) {
      if (dash && !out.empty()) out.push_back('-');
      out.push_back(static_cast<char>(std::tolower(c)));
      dash = false;
    } else {
      dash = true;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

CorpusStore::CorpusStore(const Clock& clock) : clock_(clock) {}

CorpusStore::CorpusStore(const Clock& clock, fs::path data_dir, bool fsync_events)
    : clock_(clock), data_dir_(std::move(data_dir)), persistent_(true), fsync_events_(fsync_events) {
  fs::create_directories(data_dir_ / "families");
  load();
}

std::shared_ptr<FamilySnapshot> CorpusStore::clone_family(const std::string& family_id) const {
  std::shared_lock lock(state_mu_);
  auto it = families_.find(family_id);
  if (it == families_.end()) fail(ErrorCode::UnknownFamily, "unknown family '" + family_id + "'");
  return std::make_shared<FamilySnapshot>(*it->second);
}

void CorpusStore::publish(std::shared_ptr<FamilySnapshot> next) {
  next->revision += 1;
  std::unique_lock lock(state_mu_);
  for (const auto& g : next->groups) group_family_[g->group_id] = next->family.family_id;
  families_[next->family.family_id] = std::move(next);
}

void CorpusStore::notify(const std::vector<CorpusChange>& changes) {
  for (const auto& change : changes) {
    for (const auto& listener : listeners_) listener(change);
  }
}

void CorpusStore::append_line(const fs::path& file, const std::string& line, bool sync) {
  const int fd = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) fail(ErrorCode::Io, "cannot open " + file.string());
  const std::string data = line + "\n";
  std::size_t written = 0;
  while (written < data.size()) {
    const auto n = ::write(fd, data.data() + written, data.size() - written);
    if (n < 0) {
      ::close(fd);
      fail(ErrorCode::Io, "write failed on " + file.string());
    }
    written += static_cast<std::size_t>(n);
  }
  if (sync) ::fsync(fd);
  ::close(fd);
}

void CorpusStore::register_family(const Registry& registry) {
  std::lock_guard writer(writer_);
  registry.family.validate();
  {
    std::shared_lock lock(state_mu_);
    if (families_.count(registry.family.family_id))
      fail(ErrorCode::DuplicateFamily, "family '" + registry.family.family_id + "' already registered");
  }
  auto fam = std::make_shared<FamilySnapshot>();
  fam->family = registry.family;
  for (auto label : registry.labels) {
    if (label.affiliation != fam->family.family_id)
      fail(ErrorCode::MalformedRecord, "label '" + label.label_id + "' is affiliated with another family");
    if (fam->labels.count(label.label_id)) fail(ErrorCode::MalformedRecord, "duplicate label id " + label.label_id);
    for (const auto& cell : label.region.cells) {
      if (!cell_in_bounds(cell, fam->family))
        fail(ErrorCode::OutOfBounds, "region cell " + cell.id() + " of " + label.label_id + " is out of bounds");
    }
    label.region.family_id = fam->family.family_id;
    fam->label_set.insert(label.label_id);
    fam->labels.emplace(label.label_id, std::move(label));
  }
  if (persistent_) {
    const auto dir = family_dir(data_dir_, fam->family.family_id);
    if (!fs::exists(dir / "registry.json")) {
      fs::create_directories(dir);
      write_file_atomic(dir / "registry.json", registry.to_json().dump(2) + "\n");
    }
  }
  publish(std::move(fam));
}

void CorpusStore::set_divisions(const std::string& family_id, std::vector<AdminDivision> divisions) {
  std::lock_guard writer(writer_);
  auto fam = clone_family(family_id);
  std::set<std::string> ids;
  for (const auto& d : divisions) {
    d.validate();
    if (!ids.insert(d.division_id).second) fail(ErrorCode::MalformedRecord, "duplicate division " + d.division_id);
  }
  fam->divisions = std::move(divisions);
  fam->family.admin_divisions.assign(ids.begin(), ids.end());
  if (persistent_) {
    auto list = json::array();
    for (const auto& d : fam->divisions) list.push_back(to_json_value(d));
    write_file_atomic(family_dir(data_dir_, family_id) / "divisions.json", json{{"divisions", list}}.dump(2) + "\n");
  }
  publish(std::move(fam));
}

std::size_t CorpusStore::ingest_corpus(const fs::path& path, const std::string& family_id) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open corpus file " + path.string());
  return ingest_stream(in, family_id);
}

std::size_t CorpusStore::ingest_stream(std::istream& in, const std::string& family_id) {
  std::lock_guard writer(writer_);
  auto fam = clone_family(family_id);

  std::vector<ParsedGroup> parsed;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_text(line).empty()) continue;
    auto g = parse_group_line(line, line_no);
    for (const auto& v : g.variants) {
      for (const auto& l : v.labels) {
        if (!fam->labels.count(l))
          fail(ErrorCode::UnknownLabel, "line " + std::to_string(line_no) + ": label '" + l + "' is not registered");
      }
    }
    {
      std::shared_lock lock(state_mu_);
      if (group_family_.count(g.group_id) || !seen.insert(g.group_id).second)
        fail(ErrorCode::DuplicateGroup, "duplicate group '" + g.group_id + "'");
    }
    parsed.push_back(std::move(g));
  }

  const Timestamp now = parsed.empty() ? 0 : clock_.now();
  std::vector<std::shared_ptr<const ParallelGroup>> added;
  for (auto& pg : parsed) {
    auto group = std::make_shared<ParallelGroup>();
    group->group_id = pg.group_id;
    group->family_id = family_id;
    group->standard_text = pg.standard;
    fam->group_index.emplace(group->group_id, fam->groups.size());
    fam->groups.push_back(group);
    for (auto& v : pg.variants) {
      bool grew = false;
      add_variant_to(*fam, group->group_id, v.text, v.labels, Provenance::Seed, v.has_timestamp ? v.created_at : now,
                     grew);
    }
    added.push_back(fam->groups.back());
  }
  fam->seed_group_count += parsed.size();

  if (persistent_ && !added.empty()) {
    std::string block;
    for (const auto& g : added) block += group_to_seed_line(*g).dump() + "\n";
    block.pop_back();
    fs::create_directories(family_dir(data_dir_, family_id));
    append_line(family_dir(data_dir_, family_id) / "corpus.jsonl", block, fsync_events_);
  }
  publish(std::move(fam));
  return parsed.size();
}

AddResult CorpusStore::add_variant(const std::string& group_id, std::string_view text,
                                   const std::vector<std::string>& labels, Provenance provenance) {
  std::vector<CorpusChange> changes;
  AddResult result;
  {
    std::lock_guard writer(writer_);
    std::string family_id;
    {
      std::shared_lock lock(state_mu_);
      auto it = group_family_.find(group_id);
      if (it == group_family_.end()) fail(ErrorCode::UnknownGroup, "unknown group '" + group_id + "'");
      family_id = it->second;
    }
    auto fam = clone_family(family_id);
    bool grew = false;
    result = add_variant_to(*fam, group_id, normalize_text(text), sorted_unique(labels), provenance, clock_.now(), grew);
    if (!result.added) return result;
    changes.push_back({family_id, group_id, result.variant_id, grew, fam->revision + 1});
    publish(std::move(fam));
  }
  notify(changes);
  return result;
}

void CorpusStore::open_session(const std::string& session_id, const std::string& family_id) {
  std::lock_guard writer(writer_);
  if (!has_family(family_id)) fail(ErrorCode::UnknownFamily, "unknown family '" + family_id + "'");
  if (session_id.empty()) fail(ErrorCode::InvalidPayload, "session id is empty");
  {
    std::shared_lock lock(state_mu_);
    if (sessions_.count(session_id)) return;
  }
  if (persistent_) {
    json line{{"session_id", session_id}, {"family_id", family_id}, {"created_at", clock_.now()}};
    append_line(data_dir_ / kSessionsFile, line.dump(), fsync_events_);
  }
  std::unique_lock lock(state_mu_);
  sessions_.emplace(session_id, family_id);
}

bool CorpusStore::has_session(const std::string& session_id) const {
  std::shared_lock lock(state_mu_);
  return sessions_.count(session_id) > 0;
}

std::string CorpusStore::session_family(const std::string& session_id) const {
  std::shared_lock lock(state_mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, "unknown session '" + session_id + "'");
  return it->second;
}

RecordedEvent CorpusStore::apply_event(const FeedbackEvent& event, bool replaying,
                                       std::shared_ptr<FamilySnapshot>& next, std::vector<CorpusChange>& changes) {
  const auto& p = event.payload;
  if (!p.is_object()) fail(ErrorCode::InvalidPayload, "payload must be an object");
  RecordedEvent out{event.event_id, p};
  FamilySnapshot& fam = *next;
  const std::string& family_id = fam.family.family_id;

  auto require_group = [&](const std::string& group_id) {
    if (fam.find_group(group_id)) return;
    std::shared_lock lock(state_mu_);
    if (group_family_.count(group_id))
      fail(ErrorCode::InvalidPayload, "group '" + group_id + "' belongs to another family");
    fail(ErrorCode::UnknownGroup, "unknown group '" + group_id + "'");
  };
  auto add = [&](const std::string& group_id, const std::vector<std::string>& labels) {
    const auto text = normalize_text(string_field(p, "text").get<std::string>());
    if (text.empty()) fail(ErrorCode::EmptyText, "rewrite text is empty");
    bool grew = false;
    auto result = add_variant_to(fam, group_id, text, sorted_unique(labels), Provenance::User, event.created_at, grew);
    out.payload["variant_id"] = result.added ? json(result.variant_id) : json(nullptr);
    out.payload["added"] = result.added;
    if (result.added) changes.push_back({family_id, group_id, result.variant_id, grew, 0});
  };

  switch (event.kind) {
    case FeedbackKind::Confirm: {
      const auto group_id = string_field(p, "group_id").get<std::string>();
      require_group(group_id);
      auto labels = string_list_field(p, "labels", true);
      if (labels.empty()) fail(ErrorCode::InvalidPayload, "CONFIRM needs at least one label");
      add(group_id, labels);
      break;
    }
    case FeedbackKind::Relabel: {
      const auto group_id = string_field(p, "group_id").get<std::string>();
      require_group(group_id);
      add(group_id, {string_field(p, "label").get<std::string>()});
      break;
    }
    case FeedbackKind::NewDialect: {
      const auto group_id = string_field(p, "group_id").get<std::string>();
      require_group(group_id);
      const auto name = normalize_text(string_field(p, "name").get<std::string>());
      if (name.empty()) fail(ErrorCode::InvalidPayload, "new dialect name is empty");
      const auto folded = case_fold(name);
      for (const auto& [id, l] : fam.labels) {
        if (case_fold(l.name) == folded)
          fail(ErrorCode::DuplicateDialectName, "dialect '" + name + "' already exists in " + family_id);
      }
      std::string label_id;
      if (replaying) {
        label_id = string_field(p, "label_id").get<std::string>();
      } else {
        const auto base = slugify(name).empty() ? std::string("dialect") : slugify(name);
        label_id = base;
        for (int n = 2; fam.labels.count(label_id); ++n) label_id = base + "-" + std::to_string(n);
      }
      DialectLabel label{label_id, name, family_id, HexRegion{family_id, {}}};
      fam.labels.emplace(label_id, label);
      const bool grew = fam.label_set.insert(label_id).second;
      out.payload["label_id"] = label_id;
      add(group_id, {label_id});
      if (grew) {
        if (changes.empty()) changes.push_back({family_id, group_id, "", true, 0});
        changes.back().label_set_grew = true;
      }
      break;
    }
    case FeedbackKind::GeoEdit: {
      const auto label_id = string_field(p, "label_id").get<std::string>();
      auto it = fam.labels.find(label_id);
      if (it == fam.labels.end()) {
        std::shared_lock lock(state_mu_);
        for (const auto& [fid, other] : families_) {
          if (fid != family_id && other->labels.count(label_id))
            fail(ErrorCode::InvalidPayload, "label '" + label_id + "' belongs to family " + fid);
        }
        fail(ErrorCode::UnknownLabel, "unknown label '" + label_id + "'");
      }
      const auto cells = edit_cells(it->second.region.cells, cells_field(p, "add"), cells_field(p, "remove"), fam.family);
      it->second.region.cells = cells;
      out.payload["region"] = region_ids(cells);
      changes.push_back({family_id, "", "", false, 0});
      break;
    }
    case FeedbackKind::MatchCorrection: {
      const auto variant_id = string_field(p, "variant_id").get<std::string>();
      const auto hash = variant_id.rfind('#');
      const ParallelGroup* group = hash == std::string::npos ? nullptr : fam.find_group(variant_id.substr(0, hash));
      const bool known = group && std::any_of(group->variants.begin(), group->variants.end(),
                                              [&](const DialectVariant& v) { return v.variant_id == variant_id; });
      if (!known) fail(ErrorCode::InvalidPayload, "unknown variant '" + variant_id + "' in family " + family_id);
      for (const auto& d : string_list_field(p, "divisions", true)) {
        const bool hit = std::any_of(fam.divisions.begin(), fam.divisions.end(),
                                     [&](const AdminDivision& ad) { return ad.division_id == d; });
        if (!hit) fail(ErrorCode::UnknownDivision, "unknown division '" + d + "'");
      }
      break;
    }
  }
  return out;
}

RecordedEvent CorpusStore::record_event(const EventDraft& draft) {
  std::vector<CorpusChange> changes;
  RecordedEvent recorded;
  {
    std::lock_guard writer(writer_);
    const auto family_id = session_family(draft.session_id);
    auto next = clone_family(family_id);

    FeedbackEvent event;
    event.event_id = last_event_id() + 1;
    event.session_id = draft.session_id;
    event.kind = draft.kind;
    event.payload = draft.payload;
    event.created_at = clock_.now();

    recorded = apply_event(event, false, next, changes);
    event.payload = recorded.payload;
    if (persistent_) append_line(data_dir_ / kEventsFile, event.to_json().dump(), fsync_events_);
    for (auto& c : changes) c.revision = next->revision + 1;
    publish(std::move(next));
    std::unique_lock lock(state_mu_);
    events_.push_back(std::move(event));
  }
  notify(changes);
  return recorded;
}

HexRegion CorpusStore::apply_geo_edit(const std::string& session_id, const std::string& label_id, const CellSet& add,
                                      const CellSet& remove) {
  const auto recorded = record_event(
      {session_id, FeedbackKind::GeoEdit, {{"label_id", label_id}, {"add", region_ids(add)}, {"remove", region_ids(remove)}}});
  HexRegion region;
  region.family_id = session_family(session_id);
  region.cells = parse_region_ids(recorded.payload.at("region").get<std::vector<std::string>>());
  return region;
}

CorpusView CorpusStore::snapshot(const std::string& family_id) const {
  std::shared_lock lock(state_mu_);
  auto it = families_.find(family_id);
  if (it == families_.end()) fail(ErrorCode::UnknownFamily, "unknown family '" + family_id + "'");
  return it->second;
}

std::vector<LanguageFamily> CorpusStore::families() const {
  std::shared_lock lock(state_mu_);
  std::vector<LanguageFamily> out;
  for (const auto& [id, fam] : families_) out.push_back(fam->family);
  return out;
}

bool CorpusStore::has_family(const std::string& family_id) const {
  std::shared_lock lock(state_mu_);
  return families_.count(family_id) > 0;
}

std::vector<FeedbackEvent> CorpusStore::events() const {
  std::shared_lock lock(state_mu_);
  return events_;
}

std::uint64_t CorpusStore::last_event_id() const {
  std::shared_lock lock(state_mu_);
  return events_.empty() ? 0 : events_.back().event_id;
}

void CorpusStore::subscribe(std::function<void(const CorpusChange&)> listener) {
  std::lock_guard writer(writer_);
  listeners_.push_back(std::move(listener));
}

std::string CorpusStore::canonical_dump() const {
  std::shared_lock lock(state_mu_);
  json all = json::object();
  for (const auto& [id, fam] : families_) all[id] = fam->to_json();
  return all.dump();
}

void CorpusStore::compact() {
  if (!persistent_) return;
  std::lock_guard writer(writer_);
  json state;
  {
    std::shared_lock lock(state_mu_);
    state["last_event_id"] = events_.empty() ? 0 : events_.back().event_id;
    state["families"] = json::object();
    for (const auto& [id, fam] : families_) state["families"][id] = fam->to_json();
  }
  write_file_atomic(data_dir_ / kSnapshotFile, state.dump() + "\n");
}

void CorpusStore::load() {
  // Seed files first, in family-id order.
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(data_dir_ / "families")) {
    if (entry.is_directory() && fs::exists(entry.path() / "registry.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());

  json snapshot;
  std::uint64_t replay_after = 0;
  if (fs::exists(data_dir_ / kSnapshotFile)) {
    snapshot = read_json_file(data_dir_ / kSnapshotFile);
    replay_after = snapshot.at("last_event_id").get<std::uint64_t>();
  }

  const bool was_persistent = persistent_;
  persistent_ = false;  // loading must not rewrite seed files
  for (const auto& dir : dirs) {
    const auto registry = Registry::from_json(read_json_file(dir / "registry.json"));
    const auto& id = registry.family.family_id;
    std::size_t skip = 0;
    if (snapshot.is_object() && snapshot["families"].contains(id)) {
      auto fam = std::make_shared<FamilySnapshot>(snapshot_from_json(snapshot["families"][id]));
      skip = fam->seed_group_count;
      publish(std::move(fam));
    } else {
      register_family(registry);
      if (fs::exists(dir / "divisions.json")) set_divisions(id, load_divisions(dir / "divisions.json"));
    }
    if (fs::exists(dir / "corpus.jsonl")) {
      const auto lines = read_lines(dir / "corpus.jsonl");
      std::stringstream rest;
      for (std::size_t i = skip; i < lines.size(); ++i) rest << lines[i] << "\n";
      ingest_stream(rest, id);
    }
  }

  for (const auto& line : read_lines(data_dir_ / kSessionsFile)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      sessions_.emplace(j.at("session_id").get<std::string>(), j.at("family_id").get<std::string>());
    } catch (const json::exception&) {
      // torn final write from a crash
    }
  }

  const auto event_lines = read_lines(data_dir_ / kEventsFile);
  std::size_t good_bytes = 0;
  for (std::size_t i = 0; i < event_lines.size(); ++i) {
    const auto& line = event_lines[i];
    if (line.empty()) continue;
    FeedbackEvent event;
    try {
      event = FeedbackEvent::from_json(json::parse(line));
    } catch (const std::exception&) {
      if (i + 1 == event_lines.size()) break;  // torn final write from a crash
      fail(ErrorCode::MalformedRecord, "events.jsonl line " + std::to_string(i + 1) + " is corrupt");
    }
    good_bytes += line.size() + 1;
    if (event.event_id > replay_after) {
      auto next = clone_family(session_family(event.session_id));
      std::vector<CorpusChange> ignored;
      apply_event(event, true, next, ignored);
      publish(std::move(next));
    }
    events_.push_back(std::move(event));
  }
  if (fs::exists(data_dir_ / kEventsFile) && fs::file_size(data_dir_ / kEventsFile) != good_bytes)
    fs::resize_file(data_dir_ / kEventsFile, good_bytes);
  persistent_ = was_persistent;
}

}  // namespace dialingle
