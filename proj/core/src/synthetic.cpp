#include "dialingle/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>
#include <set>

#include "dialingle/error.hpp"
#include "dialingle/text.hpp"

namespace dialingle {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Own helpers rather than <random> distributions, whose output differs
// between standard libraries.
std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }
double coin(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[pick(rng, i)]);
}

struct RulePool {
  std::string from;
  std::vector<std::string> to;
};

const std::vector<RulePool>& latin_pool() {
  static const std::vector<RulePool> pool = {
      {"a", {"ä", "aa", "å"}},   {"e", {"ie", "è", "ei"}},   {"i", {"ii", "ì", "y"}},  {"o", {"ou", "uo", "ö"}},
      {"u", {"ue", "ü", "oo"}},  {"k", {"ch", "gg", "kh"}},  {"s", {"sch", "ss", "z"}}, {"t", {"tt", "th", "dt"}},
      {"r", {"rr", "rh", "ŕ"}},  {"n", {"nn", "ng", "ñ"}},   {"l", {"ll", "lh", "ł"}},  {"m", {"mm", "mb", "mh"}},
      {"g", {"gh", "ǧ", "gj"}},  {"d", {"dd", "dh", "đ"}},   {"p", {"pf", "ph", "pp"}},
  };
  return pool;
}

const std::vector<RulePool>& hebrew_pool() {
  static const std::vector<RulePool> pool = {
      {"ש", {"ס", "שש"}}, {"ב", {"ו", "בב"}}, {"כ", {"ח", "ק"}}, {"ת", {"ט", "תת"}},
      {"ד", {"ט", "דד"}}, {"ג", {"ק", "גג"}}, {"ה", {"א", "הה"}}, {"פ", {"ף", "פפ"}},
  };
  return pool;
}

std::vector<std::string> latin_fillers() { return {"jo", "halt", "naja", "gell", "eba", "sowieso", "hald", "gäu"}; }
std::vector<std::string> hebrew_fillers() { return {"נו", "אז", "כאילו", "יעני", "סתם", "בקיצור"}; }

std::string latin_word(std::mt19937_64& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::string w;
  const std::size_t syllables = 1 + pick(rng, 3);
  for (std::size_t s = 0; s < syllables; ++s) {
    w.push_back(consonants[pick(rng, consonants.size())]);
    w.push_back(vowels[pick(rng, vowels.size())]);
    if (coin(rng) < 0.3) w.push_back(consonants[pick(rng, consonants.size())]);
  }
  return w;
}

std::string hebrew_word(std::mt19937_64& rng) {
  static const std::vector<std::string> letters = {"א", "ב", "ג", "ד", "ה", "ו", "ז", "ח", "ט", "י", "כ",
                                                   "ל", "מ", "נ", "ס", "ע", "פ", "צ", "ק", "ר", "ש", "ת"};
  std::string w;
  const std::size_t n = 2 + pick(rng, 4);
  for (std::size_t i = 0; i < n; ++i) w += letters[pick(rng, letters.size())];
  return w;
}

std::vector<std::string> vocabulary(const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < spec.vocabulary_size) {
    auto w = spec.script == Script::Latin ? latin_word(rng) : hebrew_word(rng);
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

std::string sentence(const std::vector<std::string>& vocab, std::mt19937_64& rng) {
  const std::size_t n = 6 + pick(rng, 5);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out.push_back(' ');
    out += vocab[pick(rng, vocab.size())];
  }
  return out + ".";
}

std::vector<Speaker> make_speakers(const SyntheticSpec& spec, const std::vector<std::string>& label_ids,
                                   std::mt19937_64& rng) {
  const auto& pool = spec.script == Script::Latin ? latin_pool() : hebrew_pool();
  std::vector<std::size_t> sources(pool.size());
  for (std::size_t i = 0; i < sources.size(); ++i) sources[i] = i;
  if (spec.disjoint_rules && label_ids.size() * spec.rules_per_dialect > pool.size())
    fail(ErrorCode::InvalidConfig, "not enough rule sources for disjoint dialects");
  shuffle(sources, rng);

  std::vector<Speaker> out;
  for (std::size_t d = 0; d < label_ids.size(); ++d) {
    Speaker s{label_ids[d], {}};
    std::vector<std::size_t> mine;
    if (spec.disjoint_rules) {
      mine.assign(sources.begin() + static_cast<long>(d * spec.rules_per_dialect),
                  sources.begin() + static_cast<long>((d + 1) * spec.rules_per_dialect));
    } else {
      auto all = sources;
      shuffle(all, rng);
      mine.assign(all.begin(), all.begin() + static_cast<long>(spec.rules_per_dialect));
    }
    for (auto i : mine) {
      const auto& entry = pool[i];
      s.rules.push_back({entry.from, entry.to[pick(rng, entry.to.size())], spec.rule_probability});
    }
    out.push_back(std::move(s));
  }
  return out;
}

CellSet grow_region(const LanguageFamily& family, std::size_t size, std::mt19937_64& rng) {
  static constexpr int kNeighbors[6][2] = {{1, 0}, {1, -1}, {0, -1}, {-1, 0}, {-1, 1}, {0, 1}};
  const auto all = cells_in_bounds(family);
  CellSet region{all[pick(rng, all.size())]};
  std::vector<HexCell> frontier(region.begin(), region.end());
  while (region.size() < size && !frontier.empty()) {
    const auto base = frontier[pick(rng, frontier.size())];
    const auto* n = kNeighbors[pick(rng, 6)];
    const HexCell next{base.q + n[0], base.r + n[1]};
    if (!cell_in_bounds(next, family) || region.count(next)) continue;
    region.insert(next);
    frontier.push_back(next);
  }
  return region;
}

std::vector<AdminDivision> grid_divisions(const SyntheticSpec& spec) {
  std::vector<AdminDivision> out;
  const auto& b = spec.bounding_box;
  const double w = (b.lon_max - b.lon_min) / spec.division_columns;
  const double h = (b.lat_max - b.lat_min) / spec.division_rows;
  int n = 0;
  for (int row = 0; row < spec.division_rows; ++row) {
    for (int col = 0; col < spec.division_columns; ++col) {
      const double x0 = b.lon_min + col * w, y0 = b.lat_min + row * h;
      AdminDivision d;
      d.division_id = spec.family_id + "-d" + std::to_string(++n);
      d.name = "Division " + std::to_string(n);
      d.polygon = {{{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}, {x0, y0}}};
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::string group_id(const std::string& family, char kind, std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%04zu", kind, n);
  return family + "-" + buf;
}

}  // namespace

const Speaker& SpeakerSet::speaker(std::string_view label_id) const {
  for (const auto& s : speakers) {
    if (s.label_id == label_id) return s;
  }
  fail(ErrorCode::UnknownLabel, "no speaker for label '" + std::string(label_id) + "'");
}

json SpeakerSet::to_json() const {
  auto list = json::array();
  for (const auto& s : speakers) {
    auto rules = json::array();
    for (const auto& r : s.rules) rules.push_back({{"from", r.from}, {"to", r.to}, {"probability", r.probability}});
    list.push_back({{"label_id", s.label_id}, {"rules", rules}});
  }
  return {{"family_id", family_id}, {"speakers", list}, {"fillers", fillers}};
}

SpeakerSet SpeakerSet::from_json(const json& j) {
  try {
    SpeakerSet set;
    set.family_id = j.at("family_id").get<std::string>();
    set.fillers = j.value("fillers", std::vector<std::string>{});
    for (const auto& s : j.at("speakers")) {
      Speaker sp{s.at("label_id").get<std::string>(), {}};
      for (const auto& r : s.at("rules"))
        sp.rules.push_back({r.at("from").get<std::string>(), r.at("to").get<std::string>(),
                            r.value("probability", 1.0)});
      set.speakers.push_back(std::move(sp));
    }
    return set;
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedRecord, std::string("speakers: ") + e.what());
  }
}

SpeakerSet SpeakerSet::load(const fs::path& path) { return from_json(read_json_file(path)); }

std::string apply_rules(std::string_view text, const std::vector<SubstitutionRule>& rules, std::mt19937_64& rng) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const SubstitutionRule* hit = nullptr;
    for (const auto& r : rules) {
      if (!r.from.empty() && text.substr(i, r.from.size()) == r.from) {
        hit = &r;
        break;
      }
    }
    if (hit && (hit->probability >= 1.0 || coin(rng) < hit->probability)) {
      out += hit->to;
      i += hit->from.size();
    } else if (hit) {
      out += hit->from;
      i += hit->from.size();
    } else {
      out.push_back(text[i++]);
    }
  }
  return out;
}

std::string speak(std::string_view standard, const Speaker& speaker, const std::vector<std::string>& filler_words,
                  int fillers, std::mt19937_64& rng) {
  auto words = split_words(normalize_text(apply_rules(standard, speaker.rules, rng)));
  for (int f = 0; f < fillers && !filler_words.empty(); ++f) {
    const auto at = pick(rng, words.size() + 1);
    words.insert(words.begin() + static_cast<long>(at), filler_words[pick(rng, filler_words.size())]);
  }
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

SyntheticFamily generate_family(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  SyntheticFamily out;

  auto& family = out.registry.family;
  family.family_id = spec.family_id;
  family.display_name = spec.display_name;
  family.bounding_box = spec.bounding_box;
  family.hex_resolution = spec.hex_resolution;
  family.writing_direction = spec.writing_direction;
  out.divisions = grid_divisions(spec);
  for (const auto& d : out.divisions) family.admin_divisions.push_back(d.division_id);
  family.validate();

  std::vector<std::string> label_ids;
  for (const auto& name : spec.dialect_names) {
    DialectLabel label;
    label.label_id = slugify(name);
    label.name = name;
    label.affiliation = spec.family_id;
    label.region = {spec.family_id, grow_region(family, 12, rng)};
    label_ids.push_back(label.label_id);
    out.registry.labels.push_back(std::move(label));
  }

  out.speakers.family_id = spec.family_id;
  out.speakers.speakers = make_speakers(spec, label_ids, rng);
  out.speakers.fillers = spec.script == Script::Latin ? latin_fillers() : hebrew_fillers();

  const auto vocab = vocabulary(spec, rng);
  const std::size_t per_group =
      spec.variants_per_group == 0 ? label_ids.size() : std::min(spec.variants_per_group, label_ids.size());

  std::size_t n = 0;
  for (std::size_t g = 0; g < spec.seeded_groups; ++g) {
    const auto standard = sentence(vocab, rng);
    auto chosen = label_ids;
    if (per_group < chosen.size()) {
      shuffle(chosen, rng);
      chosen.resize(per_group);
      std::sort(chosen.begin(), chosen.end());
    }
    auto variants = json::array();
    for (const auto& l : chosen)
      variants.push_back({{"text", speak(standard, out.speakers.speaker(l), {}, 0, rng)}, {"labels", {l}}});
    out.corpus.push_back({{"group_id", group_id(spec.family_id, 'g', ++n)}, {"standard", standard}, {"variants", variants}});
  }
  for (std::size_t g = 0; g < spec.standard_only_groups; ++g) {
    out.corpus.push_back({{"group_id", group_id(spec.family_id, 'g', ++n)},
                          {"standard", sentence(vocab, rng)},
                          {"variants", json::array()}});
  }
  for (std::size_t g = 0; g < spec.heldout_groups; ++g) {
    const auto standard = sentence(vocab, rng);
    auto variants = json::array();
    for (const auto& l : label_ids) {
      const int fillers = 1 + static_cast<int>(pick(rng, 2));
      variants.push_back({{"text", speak(standard, out.speakers.speaker(l), out.speakers.fillers, fillers, rng)},
                          {"labels", {l}}});
    }
    out.heldout.push_back({{"group_id", group_id(spec.family_id, 'h', g + 1)}, {"standard", standard}, {"variants", variants}});
  }
  return out;
}

std::vector<SyntheticSpec> bundled_specs() {
  SyntheticSpec tri;
  tri.family_id = "alpine3";
  tri.display_name = "Alpine (three dialects)";
  tri.bounding_box = {5.9, 45.8, 10.5, 47.8};
  tri.hex_resolution = 0.1;
  tri.dialect_names = {"Lakeside", "Highland", "Valley"};
  tri.seeded_groups = 300;
  tri.heldout_groups = 60;
  tri.disjoint_rules = true;
  tri.rules_per_dialect = 3;
  tri.rule_probability = 1.0;
  tri.seed = 3;

  SyntheticSpec oct;
  oct.family_id = "delta8";
  oct.display_name = "Delta (eight dialects)";
  oct.bounding_box = {2.0, 49.0, 9.0, 54.0};
  oct.hex_resolution = 0.15;
  oct.dialect_names = {"Amber", "Birch", "Cedar", "Dune", "Elm", "Fen", "Gorse", "Heath"};
  oct.seeded_groups = 50;
  oct.variants_per_group = 3;
  oct.standard_only_groups = 200;
  oct.heldout_groups = 50;
  oct.disjoint_rules = false;
  oct.rules_per_dialect = 3;
  oct.rule_probability = 0.5;
  oct.division_columns = 4;
  oct.division_rows = 3;
  oct.seed = 8;

  SyntheticSpec rtl;
  rtl.family_id = "kinneret2";
  rtl.display_name = "Kinneret (two dialects, right-to-left)";
  rtl.bounding_box = {34.2, 29.5, 35.9, 33.3};
  rtl.hex_resolution = 0.08;
  rtl.writing_direction = WritingDirection::RTL;
  rtl.script = Script::Hebrew;
  rtl.dialect_names = {"Galil", "Negev"};
  rtl.seeded_groups = 80;
  rtl.heldout_groups = 20;
  rtl.disjoint_rules = true;
  rtl.rules_per_dialect = 3;
  rtl.rule_probability = 1.0;
  rtl.division_columns = 2;
  rtl.division_rows = 2;
  rtl.seed = 2;

  return {tri, oct, rtl};
}

void write_family(const SyntheticFamily& family, const fs::path& dir) {
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + (dir / name).string());
    out << content;
  };
  auto lines = [](const std::vector<json>& records) {
    std::string s;
    for (const auto& r : records) s += r.dump() + "\n";
    return s;
  };
  auto divisions = json::array();
  for (const auto& d : family.divisions) divisions.push_back(to_json_value(d));
  write("registry.json", family.registry.to_json().dump(2) + "\n");
  write("divisions.json", json{{"divisions", divisions}}.dump(2) + "\n");
  write("corpus.jsonl", lines(family.corpus));
  write("heldout.jsonl", lines(family.heldout));
  write("speakers.json", family.speakers.to_json().dump(2) + "\n");
}

}  // namespace dialingle
