#pragma once

// Text formats: kernel files and number formatting shared by every CSV.
//
// Kernel file:
//   n <n> time_unit <float>
//   <n rows of n space-separated decimals>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "qsd/error.hpp"
#include "qsd/markov_core.hpp"

namespace qsd {

/// 17 significant digits, enough to round-trip any double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class ParseError : public InvalidArgument {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : InvalidArgument(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_double(std::string_view tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace detail

/// Parses a kernel file. Rejects NaN, infinite and negative entries; the
/// resulting kernel is fully validated (row sums, primitivity).
inline SubStochasticKernel read_kernel(std::istream& in, const std::string& source = "<kernel>") {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };

  if (!next_line()) throw ParseError(source, lineno + 1, "missing header line");
  const auto header = detail::split_ws(line);
  double n_value = 0.0;
  double time_unit = 0.0;
  if (header.size() != 4 || header[0] != "n" || header[2] != "time_unit" ||
      !detail::parse_double(header[1], n_value) || !detail::parse_double(header[3], time_unit))
    throw ParseError(source, lineno, "expected header 'n <n> time_unit <float>'");
  if (!(n_value >= 1.0) || n_value != std::floor(n_value) || n_value > 1e6)
    throw ParseError(source, lineno, "n must be a positive integer");
  if (!(time_unit > 0.0) || !std::isfinite(time_unit))
    throw ParseError(source, lineno, "time_unit must be positive and finite");

  const auto n = static_cast<std::size_t>(n_value);
  Matrix m(n, n);
  for (std::size_t x = 0; x < n; ++x) {
    if (!next_line()) throw ParseError(source, lineno + 1, "expected " + std::to_string(n) + " rows");
    const auto toks = detail::split_ws(line);
    if (toks.size() != n)
      throw ParseError(source, lineno, "expected " + std::to_string(n) + " entries, got " +
                                           std::to_string(toks.size()));
    for (std::size_t y = 0; y < n; ++y) {
      double v = 0.0;
      if (!detail::parse_double(toks[y], v))
        throw ParseError(source, lineno, "unparsable entry '" + std::string(toks[y]) + "'");
      if (std::isnan(v) || std::isinf(v)) throw ParseError(source, lineno, "entry is not finite");
      if (v < 0.0) throw ParseError(source, lineno, "negative entry");
      m(x, y) = v;
    }
  }
  if (next_line()) throw ParseError(source, lineno, "trailing content after kernel rows");
  try {
    return SubStochasticKernel(std::move(m), time_unit);
  } catch (const InvalidKernel& e) {
    throw ParseError(source, lineno, e.what());
  }
}

inline SubStochasticKernel load_kernel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open kernel file " + path.string());
  return read_kernel(in, path.string());
}

inline void write_kernel(std::ostream& out, const SubStochasticKernel& k) {
  const std::size_t n = k.size();
  out << "n " << n << " time_unit " << format_double(k.time_unit()) << '\n';
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      if (y) out << ' ';
      out << format_double(k(x, y));
    }
    out << '\n';
  }
}

inline std::string kernel_to_string(const SubStochasticKernel& k) {
  std::ostringstream s;
  write_kernel(s, k);
  return s.str();
}

/// Writes `contents` to a sibling temp file, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace qsd
