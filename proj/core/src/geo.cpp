#include "dialingle/geo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "dialingle/error.hpp"

namespace dialingle {
namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kBoundsEps = 1e-9;

// Hexagon vertices live on an integer lattice: X in units of sqrt(3)R/2 and
// Y in units of R/2. A cell (q, r) has its center at X = 2q + r, Y = 3r.
struct LatticePoint {
  long x = 0;
  long y = 0;
  friend auto operator<=>(const LatticePoint& a, const LatticePoint& b) {
    if (a.y != b.y) return a.y <=> b.y;
    return a.x <=> b.x;
  }
  friend bool operator==(const LatticePoint&, const LatticePoint&) = default;
};

constexpr std::array<std::array<int, 2>, 6> kCornerOffsets{{{1, 1}, {0, 2}, {-1, 1}, {-1, -1}, {0, -2}, {1, -1}}};

LatticePoint lattice_center(HexCell c) { return {2L * c.q + c.r, 3L * c.r}; }

LonLat lattice_to_lonlat(LatticePoint p, const LanguageFamily& family) {
  const double R = family.hex_resolution;
  return {family.bounding_box.lon_min + static_cast<double>(p.x) * (kSqrt3 * R / 2.0),
          family.bounding_box.lat_min + static_cast<double>(p.y) * (R / 2.0)};
}

// Drops the closing point if present.
std::span<const LonLat> open_ring(std::span<const LonLat> ring) {
  if (ring.size() >= 2 && ring.front() == ring.back()) return ring.first(ring.size() - 1);
  return ring;
}

bool on_segment(LonLat p, LonLat a, LonLat b) {
  const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
  const double scale = std::max({1.0, std::abs(b.lon - a.lon), std::abs(b.lat - a.lat)});
  if (std::abs(cross) > 1e-12 * scale * scale) return false;
  return p.lon >= std::min(a.lon, b.lon) - 1e-12 && p.lon <= std::max(a.lon, b.lon) + 1e-12 &&
         p.lat >= std::min(a.lat, b.lat) - 1e-12 && p.lat <= std::max(a.lat, b.lat) + 1e-12;
}

size_t distinct_vertices(std::span<const LonLat> polygon) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : polygon) pts.emplace_back(p.lon, p.lat);
  std::sort(pts.begin(), pts.end());
  return static_cast<size_t>(std::unique(pts.begin(), pts.end()) - pts.begin());
}

}  // namespace

bool BoundingBox::contains(LonLat p) const {
  return p.lon >= lon_min - kBoundsEps && p.lon <= lon_max + kBoundsEps && p.lat >= lat_min - kBoundsEps &&
         p.lat <= lat_max + kBoundsEps;
}

std::string_view to_string(WritingDirection dir) { return dir == WritingDirection::RTL ? "RTL" : "LTR"; }

WritingDirection parse_writing_direction(std::string_view text) {
  if (text == "LTR") return WritingDirection::LTR;
  if (text == "RTL") return WritingDirection::RTL;
  fail(ErrorCode::MalformedRecord, "writing_direction must be LTR or RTL");
}

void LanguageFamily::validate() const {
  if (family_id.empty()) fail(ErrorCode::MalformedRecord, "family_id is empty");
  if (!bounding_box.well_formed())
    fail(ErrorCode::MalformedRecord, "bounding_box of " + family_id + " must have min < max on both axes");
  if (!(hex_resolution > 0.0)) fail(ErrorCode::MalformedRecord, "hex_resolution of " + family_id + " must be > 0");
}

std::string HexCell::id() const { return std::to_string(q) + ":" + std::to_string(r); }

HexCell HexCell::parse(std::string_view id) {
  const auto colon = id.find(':');
  HexCell cell;
  auto parse_int = [&](std::string_view part, int& out) {
    const auto* end = part.data() + part.size();
    auto [ptr, ec] = std::from_chars(part.data(), end, out);
    return ec == std::errc() && ptr == end && !part.empty();
  };
  if (colon == std::string_view::npos || !parse_int(id.substr(0, colon), cell.q) ||
      !parse_int(id.substr(colon + 1), cell.r))
    fail(ErrorCode::InvalidPayload, "bad hex cell id '" + std::string(id) + "'");
  return cell;
}

void AdminDivision::validate() const {
  if (division_id.empty()) fail(ErrorCode::MalformedRecord, "division_id is empty");
  if (polygon.empty()) fail(ErrorCode::MalformedRecord, "division " + division_id + " has no rings");
  for (const auto& ring : polygon) {
    if (ring.size() < 4) fail(ErrorCode::MalformedRecord, "division " + division_id + " ring has fewer than 4 points");
    if (!(ring.front() == ring.back()))
      fail(ErrorCode::MalformedRecord, "division " + division_id + " ring is not closed");
  }
}

LonLat hex_center(HexCell cell, const LanguageFamily& family) {
  const double R = family.hex_resolution;
  return {family.bounding_box.lon_min + R * kSqrt3 * (cell.q + cell.r / 2.0),
          family.bounding_box.lat_min + R * 1.5 * cell.r};
}

std::array<LonLat, 6> hex_corners(HexCell cell, const LanguageFamily& family) {
  std::array<LonLat, 6> out;
  const auto c = lattice_center(cell);
  for (size_t i = 0; i < 6; ++i)
    out[i] = lattice_to_lonlat({c.x + kCornerOffsets[i][0], c.y + kCornerOffsets[i][1]}, family);
  return out;
}

bool cell_in_bounds(HexCell cell, const LanguageFamily& family) {
  return family.bounding_box.contains(hex_center(cell, family));
}

std::vector<HexCell> cells_in_bounds(const LanguageFamily& family) {
  const auto& box = family.bounding_box;
  const double R = family.hex_resolution;
  const int r_max = static_cast<int>(std::floor((box.lat_max - box.lat_min) / (1.5 * R) + 1e-9));
  const double width = (box.lon_max - box.lon_min) / (kSqrt3 * R);
  std::vector<HexCell> out;
  for (int r = 0; r <= r_max; ++r) {
    const int q_lo = static_cast<int>(std::floor(-r / 2.0)) - 1;
    const int q_hi = static_cast<int>(std::ceil(width - r / 2.0)) + 1;
    for (int q = q_lo; q <= q_hi; ++q) {
      if (cell_in_bounds({q, r}, family)) out.push_back({q, r});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool point_in_polygon(LonLat point, std::span<const LonLat> polygon) {
  const auto ring = open_ring(polygon);
  const size_t n = ring.size();
  if (n < 3) return false;
  bool inside = false;
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const LonLat a = ring[i];
    const LonLat b = ring[j];
    if (on_segment(point, a, b)) return true;
    if ((a.lat > point.lat) != (b.lat > point.lat)) {
      const double x = a.lon + (point.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (point.lon < x) inside = !inside;
    }
  }
  return inside;
}

CellSet cells_in_lasso(std::span<const LonLat> polygon, const LanguageFamily& family) {
  const auto ring = open_ring(polygon);
  if (distinct_vertices(ring) < 3) fail(ErrorCode::DegeneratePolygon, "lasso needs at least 3 distinct vertices");
  BoundingBox hull{ring[0].lon, ring[0].lat, ring[0].lon, ring[0].lat};
  for (const auto& p : ring) {
    hull.lon_min = std::min(hull.lon_min, p.lon);
    hull.lon_max = std::max(hull.lon_max, p.lon);
    hull.lat_min = std::min(hull.lat_min, p.lat);
    hull.lat_max = std::max(hull.lat_max, p.lat);
  }
  CellSet out;
  for (const auto& cell : cells_in_bounds(family)) {
    const auto center = hex_center(cell, family);
    if (hull.contains(center) && point_in_polygon(center, ring)) out.insert(cell);
  }
  return out;
}

CellSet edit_cells(const CellSet& region, const CellSet& add, const CellSet& remove, const LanguageFamily& family) {
  for (const auto& cell : add) {
    if (remove.count(cell)) fail(ErrorCode::ConflictingEdit, "cell " + cell.id() + " is both added and removed");
  }
  for (const auto* set : {&add, &remove}) {
    for (const auto& cell : *set) {
      if (!cell_in_bounds(cell, family))
        fail(ErrorCode::OutOfBounds, "cell " + cell.id() + " lies outside family " + family.family_id);
    }
  }
  CellSet out = region;
  out.insert(add.begin(), add.end());
  for (const auto& cell : remove) out.erase(cell);
  return out;
}

std::vector<Ring> region_boundary(const CellSet& cells, const LanguageFamily& family) {
  // Each hexagon contributes its six counter-clockwise edges. An edge shared
  // by two cells shows up once in each direction and cancels.
  std::set<std::pair<LatticePoint, LatticePoint>> edges;
  for (const auto& cell : cells) {
    const auto c = lattice_center(cell);
    for (size_t i = 0; i < 6; ++i) {
      const LatticePoint a{c.x + kCornerOffsets[i][0], c.y + kCornerOffsets[i][1]};
      const auto& o = kCornerOffsets[(i + 1) % 6];
      const LatticePoint b{c.x + o[0], c.y + o[1]};
      if (auto it = edges.find({b, a}); it != edges.end()) {
        edges.erase(it);
      } else {
        edges.insert({a, b});
      }
    }
  }
  // Three hexagons meet at every lattice vertex, so each boundary vertex has
  // exactly one outgoing boundary edge.
  std::map<LatticePoint, LatticePoint> next;
  for (const auto& [a, b] : edges) next.emplace(a, b);

  std::vector<Ring> rings;
  while (!next.empty()) {
    const LatticePoint start = next.begin()->first;
    Ring ring;
    LatticePoint at = start;
    do {
      ring.push_back(lattice_to_lonlat(at, family));
      auto it = next.find(at);
      if (it == next.end()) fail(ErrorCode::Internal, "open boundary chain");
      at = it->second;
      next.erase(it);
    } while (!(at == start));
    ring.push_back(ring.front());
    rings.push_back(std::move(ring));
  }
  return rings;
}

LonLat ring_centroid(const Ring& ring) {
  const auto pts = open_ring(ring);
  if (pts.empty()) return {};
  double area2 = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) {
    const auto& a = pts[i];
    const auto& b = pts[(i + 1) % pts.size()];
    const double cross = a.lon * b.lat - b.lon * a.lat;
    area2 += cross;
    cx += (a.lon + b.lon) * cross;
    cy += (a.lat + b.lat) * cross;
  }
  if (std::abs(area2) < 1e-15) {
    LonLat mean;
    for (const auto& p : pts) {
      mean.lon += p.lon;
      mean.lat += p.lat;
    }
    mean.lon /= static_cast<double>(pts.size());
    mean.lat /= static_cast<double>(pts.size());
    return mean;
  }
  return {cx / (3.0 * area2), cy / (3.0 * area2)};
}

std::set<std::string> divisions_hit(const DivisionQuery& query, std::span<const AdminDivision> divisions) {
  std::set<std::string> out;
  if (!query.use_lasso) {
    for (const auto& id : query.ids) {
      const bool known = std::any_of(divisions.begin(), divisions.end(),
                                     [&](const AdminDivision& d) { return d.division_id == id; });
      if (!known) fail(ErrorCode::UnknownDivision, "unknown division '" + id + "'");
      out.insert(id);
    }
    return out;
  }
  if (distinct_vertices(open_ring(query.lasso)) < 3)
    fail(ErrorCode::DegeneratePolygon, "lasso needs at least 3 distinct vertices");
  for (const auto& d : divisions) {
    if (d.polygon.empty()) continue;
    if (point_in_polygon(ring_centroid(d.polygon.front()), query.lasso)) out.insert(d.division_id);
  }
  return out;
}

std::set<std::string> divisions_covering(const CellSet& cells, const LanguageFamily& family,
                                         std::span<const AdminDivision> divisions) {
  std::set<std::string> out;
  for (const auto& d : divisions) {
    if (d.polygon.empty()) continue;
    for (const auto& cell : cells) {
      const auto center = hex_center(cell, family);
      bool inside = point_in_polygon(center, d.polygon.front());
      for (size_t h = 1; inside && h < d.polygon.size(); ++h) {
        if (point_in_polygon(center, d.polygon[h])) inside = false;
      }
      if (inside) {
        out.insert(d.division_id);
        break;
      }
    }
  }
  return out;
}

std::vector<std::string> region_ids(const CellSet& cells) {
  std::vector<std::string> ids;
  ids.reserve(cells.size());
  for (const auto& c : cells) ids.push_back(c.id());
  std::sort(ids.begin(), ids.end());
  return ids;
}

CellSet parse_region_ids(const std::vector<std::string>& ids) {
  CellSet out;
  for (const auto& id : ids) out.insert(HexCell::parse(id));
  return out;
}

nlohmann::json to_json_value(const LanguageFamily& family) {
  const auto& b = family.bounding_box;
  return {{"family_id", family.family_id},
          {"display_name", family.display_name},
          {"bounding_box", {b.lon_min, b.lat_min, b.lon_max, b.lat_max}},
          {"hex_resolution", family.hex_resolution},
          {"admin_divisions", family.admin_divisions},
          {"writing_direction", to_string(family.writing_direction)}};
}

LanguageFamily family_from_json(const nlohmann::json& j) {
  try {
    LanguageFamily f;
    f.family_id = j.at("family_id").get<std::string>();
    f.display_name = j.value("display_name", f.family_id);
    const auto& box = j.at("bounding_box");
    if (!box.is_array() || box.size() != 4) fail(ErrorCode::MalformedRecord, "bounding_box must have 4 numbers");
    f.bounding_box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
    f.hex_resolution = j.at("hex_resolution").get<double>();
    f.admin_divisions = j.value("admin_divisions", std::vector<std::string>{});
    f.writing_direction = parse_writing_direction(j.value("writing_direction", std::string("LTR")));
    f.validate();
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedRecord, std::string("family record: ") + e.what());
  }
}

nlohmann::json ring_to_json(const Ring& ring) {
  auto out = nlohmann::json::array();
  for (const auto& p : ring) out.push_back({p.lon, p.lat});
  return out;
}

Ring ring_from_json(const nlohmann::json& j) {
  Ring ring;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) fail(ErrorCode::MalformedRecord, "polygon point must be [lon, lat]");
    ring.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return ring;
}

nlohmann::json to_json_value(const AdminDivision& division) {
  auto rings = nlohmann::json::array();
  for (const auto& r : division.polygon) rings.push_back(ring_to_json(r));
  return {{"division_id", division.division_id}, {"name", division.name}, {"polygon", rings}};
}

AdminDivision division_from_json(const nlohmann::json& j) {
  try {
    AdminDivision d;
    d.division_id = j.at("division_id").get<std::string>();
    d.name = j.value("name", d.division_id);
    for (const auto& ring : j.at("polygon")) d.polygon.push_back(ring_from_json(ring));
    d.validate();
    return d;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedRecord, std::string("division record: ") + e.what());
  }
}

}  // namespace dialingle
