#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <utility>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dialingle/classifier.hpp"
#include "dialingle/corpus.hpp"
#include "dialingle/error.hpp"
#include "dialingle/geo.hpp"

namespace dialingle::testing {

/// The code of the Error thrown by `f`; records a failure when nothing is thrown.
template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::Internal;
}

inline LanguageFamily make_family(const std::string& id = "fam") {
  LanguageFamily f;
  f.family_id = id;
  f.display_name = "Family " + id;
  f.bounding_box = {0.0, 0.0, 2.0, 2.0};
  f.hex_resolution = 0.1;
  return f;
}

/// Labels "a", "b", "c" ("Alpha", "Beta", "Gamma"), each owning a small region.
inline Registry make_registry(const std::string& id = "fam", std::vector<std::string> labels = {"a", "b", "c"}) {
  static const std::vector<std::string> names = {"Alpha", "Beta", "Gamma", "Delta", "Epsilon", "Zeta", "Eta", "Theta"};
  Registry r;
  r.family = make_family(id);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    DialectLabel l;
    l.label_id = labels[i];
    l.name = names[i % names.size()] + (i >= names.size() ? std::to_string(i) : "");
    l.affiliation = id;
    l.region = {id, {HexCell{static_cast<int>(2 + 3 * i), 2}, HexCell{static_cast<int>(3 + 3 * i), 2}}};
    r.labels.push_back(std::move(l));
  }
  return r;
}

/// Four 1x1 divisions tiling the 2x2 test bounding box: sw, se, nw, ne.
inline std::vector<AdminDivision> make_divisions() {
  std::vector<AdminDivision> out;
  const std::vector<std::pair<std::string, LonLat>> corners = {
      {"sw", {0, 0}}, {"se", {1, 0}}, {"nw", {0, 1}}, {"ne", {1, 1}}};
  for (const auto& [id, c] : corners) {
    AdminDivision d;
    d.division_id = id;
    d.name = id;
    d.polygon = {{{c.lon, c.lat}, {c.lon + 1, c.lat}, {c.lon + 1, c.lat + 1}, {c.lon, c.lat + 1}, {c.lon, c.lat}}};
    out.push_back(std::move(d));
  }
  return out;
}

using VariantSpec = std::pair<std::string, std::vector<std::string>>;

inline std::string corpus_line(const std::string& group_id, const std::string& standard,
                               const std::vector<VariantSpec>& variants) {
  auto list = nlohmann::json::array();
  for (const auto& [text, labels] : variants) list.push_back({{"text", text}, {"labels", labels}});
  return nlohmann::json{{"group_id", group_id}, {"standard", standard}, {"variants", list}}.dump();
}

inline std::size_t ingest_lines(CorpusStore& store, const std::string& family, const std::vector<std::string>& lines) {
  std::stringstream ss;
  for (const auto& l : lines) ss << l << "\n";
  return store.ingest_stream(ss, family);
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dialingle-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// A model whose prediction is `probs` for every input: every input
/// embedding is e_0 and output row k carries ln p_k in coordinate 0.
inline TrainedModel constant_model(const std::vector<std::string>& labels, const std::vector<double>& probs) {
  ModelConfig c;
  c.hash_buckets = 1u << 12;
  c.embedding_dim = 4;
  TrainedModel m(c, labels);
  auto in = m.input_weights();
  for (std::size_t b = 0; b < c.hash_buckets; ++b) in[b * 4] = 1.0f;
  auto out = m.output_weights();
  for (std::size_t k = 0; k < labels.size(); ++k) out[k * 4] = static_cast<float>(std::log(probs[k]));
  return m;
}

}  // namespace dialingle::testing
