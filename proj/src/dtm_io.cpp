#include "cdtm/dtm_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "cdtm/error.hpp"
#include "cdtm/format.hpp"

namespace cdtm {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

double parse_number(const std::string& token, const char* what) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw Error(ErrorCode::Io, std::string("asc: bad ") + what + " value '" + token + "'");
  }
  return v;
}

}  // namespace

TerrainGrid read_asc(std::istream& in) {
  std::map<std::string, double> header;
  std::string token;
  std::optional<std::string> pending;  // first data token, already consumed
  while (in >> token) {
    if (!token.empty() && (std::isalpha(static_cast<unsigned char>(token[0])) != 0)) {
      std::string value;
      if (!(in >> value)) throw Error(ErrorCode::Io, "asc: header key '" + token + "' without value");
      const std::string key = lower(token);
      if (header.count(key)) throw Error(ErrorCode::Io, "asc: duplicate header key '" + token + "'");
      header[key] = parse_number(value, token.c_str());
    } else {
      pending = token;
      break;
    }
  }
  auto require = [&](const char* key) {
    auto it = header.find(key);
    if (it == header.end()) throw Error(ErrorCode::Io, std::string("asc: missing header key ") + key);
    return it->second;
  };
  const double ncols = require("ncols");
  const double nrows = require("nrows");
  const double cellsize = require("cellsize");
  if (ncols < 2 || nrows < 2 || ncols != std::floor(ncols) || nrows != std::floor(nrows)) {
    throw Error(ErrorCode::Io, "asc: ncols/nrows must be integers >= 2");
  }
  if (!(cellsize > 0.0)) throw Error(ErrorCode::Io, "asc: cellsize must be positive");

  double x0 = 0.0, y0 = 0.0;
  if (header.count("xllcenter")) {
    x0 = header["xllcenter"];
  } else {
    x0 = require("xllcorner") + 0.5 * cellsize;
  }
  if (header.count("yllcenter")) {
    y0 = header["yllcenter"];
  } else {
    y0 = require("yllcorner") + 0.5 * cellsize;
  }
  std::optional<double> nodata;
  if (header.count("nodata_value")) nodata = header["nodata_value"];
  for (const auto& [key, value] : header) {
    static const char* known[] = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter",
                                  "yllcenter", "cellsize", "nodata_value"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known)) {
      throw Error(ErrorCode::Io, "asc: unknown header key '" + key + "'");
    }
  }

  const auto rows = static_cast<Eigen::Index>(nrows);
  const auto cols = static_cast<Eigen::Index>(ncols);
  Eigen::MatrixXd h(rows, cols);
  for (Eigen::Index fr = 0; fr < rows; ++fr) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (pending) {
        token = *pending;
        pending.reset();
      } else if (!(in >> token)) {
        throw Error(ErrorCode::Io, "asc: truncated height data");
      }
      const double v = parse_number(token, "height");
      if (nodata && v == *nodata) {
        throw Error(ErrorCode::Io, "asc: NODATA cell at row " + std::to_string(fr) + ", column " +
                                       std::to_string(c));
      }
      h(rows - 1 - fr, c) = v;  // file rows run north to south
    }
  }
  if (in >> token) throw Error(ErrorCode::Io, "asc: trailing data after heights");
  return TerrainGrid(Vec2(x0, y0), cellsize, std::move(h));
}

TerrainGrid load_asc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open terrain file " + path);
  return read_asc(in);
}

void write_asc(std::ostream& out, const TerrainGrid& grid) {
  const double s = grid.spacing();
  out << "ncols " << grid.cols() << "\n"
      << "nrows " << grid.rows() << "\n"
      << "xllcorner " << fmt_double(grid.x_min() - 0.5 * s) << "\n"
      << "yllcorner " << fmt_double(grid.y_min() - 0.5 * s) << "\n"
      << "cellsize " << fmt_double(s) << "\n"
      << "NODATA_value -9999\n";
  for (Eigen::Index fr = 0; fr < grid.rows(); ++fr) {
    const Eigen::Index r = grid.rows() - 1 - fr;
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      if (c) out << ' ';
      out << fmt_double(grid.heights()(r, c));
    }
    out << '\n';
  }
}

void save_asc(const std::string& path, const TerrainGrid& grid) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write terrain file " + path);
  write_asc(out, grid);
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

}  // namespace cdtm
