#pragma once

// ESRI ASCII grid (.asc) reader and writer.
//
// Header keys: ncols, nrows, xllcorner|xllcenter, yllcorner|yllcenter,
// cellsize, NODATA_value (optional). Heights follow row by row, northernmost
// row first. Grid nodes are cell centres, so a corner-registered header puts
// the first node at xllcorner + cellsize / 2.

#include <iosfwd>
#include <string>

#include "cdtm/dtm.hpp"

namespace cdtm {

/// Throws Io on malformed input or on any NODATA cell.
TerrainGrid read_asc(std::istream& in);
TerrainGrid load_asc(const std::string& path);

/// Writes a corner-registered header and full-precision heights.
void write_asc(std::ostream& out, const TerrainGrid& grid);
void save_asc(const std::string& path, const TerrainGrid& grid);

}  // namespace cdtm
