#pragma once

#include <array>
#include <compare>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dialingle {

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
  friend bool operator==(const LonLat&, const LonLat&) = default;
};

using Ring = std::vector<LonLat>;

struct BoundingBox {
  double lon_min = 0.0;
  double lat_min = 0.0;
  double lon_max = 0.0;
  double lat_max = 0.0;

  bool well_formed() const { return lon_min < lon_max && lat_min < lat_max; }
  bool contains(LonLat p) const;
  LonLat center() const { return {(lon_min + lon_max) / 2.0, (lat_min + lat_max) / 2.0}; }
};

enum class WritingDirection { LTR, RTL };

std::string_view to_string(WritingDirection dir);
WritingDirection parse_writing_direction(std::string_view text);

struct LanguageFamily {
  std::string family_id;
  std::string display_name;
  BoundingBox bounding_box;
  /// Hexagon circumradius in degrees.
  double hex_resolution = 0.0;
  std::vector<std::string> admin_divisions;
  WritingDirection writing_direction = WritingDirection::LTR;

  void validate() const;
};

/// Pointy-top axial hexagon coordinate. Canonical id is "q:r".
struct HexCell {
  int q = 0;
  int r = 0;

  std::string id() const;
  static HexCell parse(std::string_view id);

  friend auto operator<=>(const HexCell&, const HexCell&) = default;
};

using CellSet = std::set<HexCell>;

struct HexRegion {
  std::string family_id;
  CellSet cells;

  friend bool operator==(const HexRegion&, const HexRegion&) = default;
};

struct AdminDivision {
  std::string division_id;
  std::string name;
  /// First ring is the outer boundary; any further rings are holes.
  std::vector<Ring> polygon;

  void validate() const;
};

/// Center of a cell in an equirectangular frame anchored at the family's
/// (lon_min, lat_min) corner.
LonLat hex_center(HexCell cell, const LanguageFamily& family);

/// The six corners, counter-clockwise starting at the east-north-east vertex.
std::array<LonLat, 6> hex_corners(HexCell cell, const LanguageFamily& family);

bool cell_in_bounds(HexCell cell, const LanguageFamily& family);

/// Every cell whose center lies inside the family bounding box, sorted.
std::vector<HexCell> cells_in_bounds(const LanguageFamily& family);

/// Even-odd rule; points on an edge or vertex count as inside.
bool point_in_polygon(LonLat point, std::span<const LonLat> polygon);

/// Cells whose centers fall inside the lasso polygon and the family bounds.
CellSet cells_in_lasso(std::span<const LonLat> polygon, const LanguageFamily& family);

/// (region ∪ add) \ remove, after checking bounds and that add ∩ remove = ∅.
CellSet edit_cells(const CellSet& region, const CellSet& add, const CellSet& remove,
                   const LanguageFamily& family);

/// Boundary rings of the union of the hexagons. Each ring is closed (last
/// point repeats the first). Outer rings run counter-clockwise and holes
/// clockwise. Rings are ordered by their lowest vertex.
std::vector<Ring> region_boundary(const CellSet& cells, const LanguageFamily& family);

/// Area centroid of a ring (falls back to the vertex mean for zero area).
LonLat ring_centroid(const Ring& ring);

/// Either explicit division ids or a lasso polygon.
struct DivisionQuery {
  std::vector<std::string> ids;
  Ring lasso;
  bool use_lasso = false;
};

std::set<std::string> divisions_hit(const DivisionQuery& query, std::span<const AdminDivision> divisions);

/// Divisions containing at least one center of the given cells.
std::set<std::string> divisions_covering(const CellSet& cells, const LanguageFamily& family,
                                         std::span<const AdminDivision> divisions);

/// Sorted "q:r" ids.
std::vector<std::string> region_ids(const CellSet& cells);
CellSet parse_region_ids(const std::vector<std::string>& ids);

// JSON forms used by the registry and division files.
nlohmann::json to_json_value(const LanguageFamily& family);
LanguageFamily family_from_json(const nlohmann::json& j);
nlohmann::json to_json_value(const AdminDivision& division);
AdminDivision division_from_json(const nlohmann::json& j);
nlohmann::json ring_to_json(const Ring& ring);
Ring ring_from_json(const nlohmann::json& j);

}  // namespace dialingle
