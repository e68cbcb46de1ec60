#pragma once

// On-disk formats shared by the pipeline stages and the command line.
//
//   labeled matrix   ",c1,c2,..." header, then "r,v,v,...", empty cell = missing;
//                    a response matrix also has a .json sidecar with counts
//   quotes/<SYM>.csv "ts_ms,bid,ask"
//   trades/<SYM>.csv "ts_ms,sign,volume,price"
//   sample           one number per line (optional "value" header) or a labeled matrix
//
// Doubles are written in shortest round-trip form so a file read back gives
// the identical value.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "impactlab/classify.hpp"
#include "impactlab/error.hpp"
#include "impactlab/kv.hpp"
#include "impactlab/lob.hpp"
#include "impactlab/matrix.hpp"
#include "impactlab/response.hpp"
#include "impactlab/statfit.hpp"
#include "impactlab/svd.hpp"

namespace impactlab {

namespace fs = std::filesystem;

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw domain_error("format_double: cannot format");
  return {buf, p};
}

inline std::string format_fixed(double v, int digits) {
  char buf[128];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  if (ec != std::errc{}) throw domain_error("format_fixed: cannot format");
  std::string s(buf, p);
  if (s.starts_with('-') && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Writes via a temporary sibling and rename, creating parent directories.
inline void write_file(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw io_error("write failed: " + path.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw io_error("cannot rename into " + path.string() + ": " + ec.message());
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw io_error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int k = 0; k < len; ++k) {
    out.push_back(hex[md[k] >> 4]);
    out.push_back(hex[md[k] & 0xf]);
  }
  return out;
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_text_file(path.string())); }

/// Comma split that keeps empty fields.
inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto c = line.find(',', start);
    if (c == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, c - start));
    start = c + 1;
  }
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    auto line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    pos = eol + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labeled matrices
// ---------------------------------------------------------------------------

struct LabeledMatrix {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Matrix values;
  std::vector<bool> missing;  // row-major

  bool any_missing() const { return std::find(missing.begin(), missing.end(), true) != missing.end(); }
};

inline std::string matrix_csv(const std::vector<std::string>& rows, const std::vector<std::string>& cols,
                              const Matrix& m, const std::vector<bool>* missing = nullptr) {
  std::string out;
  for (const auto& c : cols) out += "," + c;
  out += '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out += rows[r];
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out += ',';
      if (!(missing && (*missing)[r * m.cols() + c])) out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

inline std::string matrix_csv(const LabeledMatrix& m) {
  return matrix_csv(m.row_labels, m.col_labels, m.values, &m.missing);
}

inline LabeledMatrix parse_matrix_csv(std::string_view text, const std::string& what = "matrix") {
  auto lines = split_lines(text);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw parse_error::at_line(1, what + ": empty file");
  auto header = split_fields(lines[0]);
  if (header.empty() || !header[0].empty())
    throw parse_error::at_line(1, what + ": header must start with an empty cell");
  LabeledMatrix m;
  for (std::size_t c = 1; c < header.size(); ++c) m.col_labels.emplace_back(header[c]);
  const std::size_t nc = m.col_labels.size();
  const std::size_t nr = lines.size() - 1;
  m.values = Matrix(nr, nc);
  m.missing.assign(nr * nc, false);
  for (std::size_t r = 0; r < nr; ++r) {
    auto f = split_fields(lines[r + 1]);
    if (f.size() != nc + 1)
      throw parse_error::at_line(r + 2, what + ": expected " + std::to_string(nc + 1) + " fields");
    m.row_labels.emplace_back(f[0]);
    for (std::size_t c = 0; c < nc; ++c) {
      if (f[c + 1].empty()) {
        m.missing[r * nc + c] = true;
        continue;
      }
      auto v = parse_number<double>(f[c + 1]);
      if (!v) throw parse_error::at_line(r + 2, what + ": bad number '" + std::string(f[c + 1]) + "'");
      m.values(r, c) = *v;
    }
  }
  return m;
}

inline LabeledMatrix read_matrix_csv(const fs::path& path) {
  return parse_matrix_csv(read_text_file(path.string()), path.string());
}

inline std::vector<std::string> factor_labels(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t k = 1; k <= n; ++k) out.push_back(std::to_string(k));
  return out;
}

// ---------------------------------------------------------------------------
// Response matrices: values csv plus a counts csv
// ---------------------------------------------------------------------------

inline std::vector<bool> missing_mask(const ResponseMatrix& r) {
  std::vector<bool> m(r.counts.size());
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = r.counts[k] == 0;
  return m;
}

inline fs::path counts_path(fs::path values_path) {
  auto stem = values_path.stem().string();
  return values_path.replace_filename(stem + ".counts.csv");
}

inline fs::path sidecar_path(fs::path values_path) { return values_path.replace_extension(".json"); }

/// Counts and metadata that travel with a response matrix csv.
inline std::string response_sidecar(const ResponseMatrix& r) {
  nlohmann::json counts = nlohmann::json::array();
  for (std::size_t i = 0; i < r.size(); ++i)
    counts.push_back(std::vector<std::uint64_t>(r.counts.begin() + static_cast<std::ptrdiff_t>(i * r.size()),
                                                r.counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * r.size())));
  nlohmann::json j{{"matrix", r.key.name()},   {"x", to_string(r.key.x)},
                   {"y", to_string(r.key.y)},   {"subset", to_string(r.key.subset)},
                   {"symbols", r.symbols},      {"missing", r.missing_count()},
                   {"one_sided", r.one_sided},  {"counts", counts}};
  return j.dump(1) + '\n';
}

inline void write_response(const fs::path& path, const ResponseMatrix& r) {
  const auto mask = missing_mask(r);
  write_file(path, matrix_csv(r.symbols, r.symbols, r.values, &mask));
  write_file(sidecar_path(path), response_sidecar(r));
}

/// Reads values and, when present, the sidecar next to them. Without a
/// sidecar every present entry gets count 1 and `key` is used as given.
inline ResponseMatrix read_response(const fs::path& path, ResponseKey key = {}) {
  const LabeledMatrix v = read_matrix_csv(path);
  if (v.row_labels != v.col_labels) throw parse_error::at_line(1, path.string() + ": row and column labels differ");
  const std::size_t n = v.row_labels.size();
  ResponseMatrix r = ResponseMatrix::empty(v.row_labels, key);
  r.values = v.values;
  for (std::size_t k = 0; k < r.counts.size(); ++k) r.counts[k] = v.missing[k] ? 0 : 1;
  const fs::path sp = sidecar_path(path);
  if (fs::exists(sp)) {
    try {
      const auto j = nlohmann::json::parse(read_text_file(sp.string()));
      auto x = parse_x_kind(j.at("x").get<std::string>());
      auto y = parse_y_kind(j.at("y").get<std::string>());
      auto s = parse_subset(j.at("subset").get<std::string>());
      if (!x || !y || !s) throw incompatible_error(sp.string() + ": unknown matrix kind");
      r.key = {*x, *y, *s};
      if (j.at("symbols").get<std::vector<std::string>>() != r.symbols)
        throw incompatible_error(sp.string() + ": symbols do not match " + path.string());
      const auto counts = j.at("counts").get<std::vector<std::vector<std::uint64_t>>>();
      if (counts.size() != n) throw incompatible_error(sp.string() + ": counts have the wrong shape");
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[i].size() != n) throw incompatible_error(sp.string() + ": counts have the wrong shape");
        for (std::size_t c = 0; c < n; ++c) {
          r.counts[i * n + c] = counts[i][c];
          if ((counts[i][c] == 0) != v.missing[i * n + c])
            throw incompatible_error(sp.string() + ": counts disagree with missing entries");
        }
      }
      r.one_sided = j.at("one_sided").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw parse_error::at_offset(0, sp.string() + ": " + e.what());
    }
  }
  for (std::size_t k = 0; k < r.counts.size(); ++k)
    if (r.counts[k] == 0) r.values.values()[k] = 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Pair weights: weights csv (empty = undefined) plus a label-count csv
// ---------------------------------------------------------------------------

inline std::string weights_csv(const PairWeights& w) {
  std::vector<bool> mask(w.counts.size());
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = !w.counts[k].weight().has_value();
  return matrix_csv(w.symbols, w.symbols, w.matrix(), &mask);
}

inline std::string label_counts_csv(const PairWeights& w) {
  std::string c = "quoted,traded,single,multiple,dropped\n";
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j) {
      const auto& lc = w.at(i, j);
      c += w.symbols[i] + ',' + w.symbols[j] + ',' + std::to_string(lc.single) + ',' +
           std::to_string(lc.multiple) + ',' + std::to_string(lc.dropped) + '\n';
    }
  return c;
}

inline void write_weights(const fs::path& path, const PairWeights& w) {
  write_file(path, weights_csv(w));
  write_file(counts_path(path), label_counts_csv(w));
}

// ---------------------------------------------------------------------------
// Per-stock quote and trade series
// ---------------------------------------------------------------------------

inline std::string quotes_csv(std::span<const QuoteEvent> q) {
  std::string out = "ts_ms,bid,ask\n";
  for (const auto& e : q)
    out += std::to_string(e.ts) + ',' + std::to_string(e.bid) + ',' + std::to_string(e.ask) + '\n';
  return out;
}

inline std::string trades_csv(std::span<const TradeEvent> t) {
  std::string out = "ts_ms,sign,volume,price\n";
  for (const auto& e : t)
    out += std::to_string(e.ts) + ',' + std::to_string(e.sign) + ',' + std::to_string(e.volume) + ',' +
           std::to_string(e.price) + '\n';
  return out;
}

namespace detail {

template <typename Row>
std::vector<Row> parse_rows(std::string_view text, std::string_view header, std::size_t fields,
                            const std::string& what, auto&& make) {
  auto lines = split_lines(text);
  if (lines.empty() || lines[0] != header)
    throw parse_error::at_line(1, what + ": expected header '" + std::string(header) + "'");
  std::vector<Row> out;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (lines[k].empty() && k + 1 == lines.size()) break;
    auto f = split_fields(lines[k]);
    if (f.size() != fields) throw parse_error::at_line(k + 1, what + ": wrong field count");
    out.push_back(make(f, k + 1));
  }
  return out;
}

template <typename T>
T field(std::string_view s, std::size_t line, const std::string& what) {
  auto v = parse_number<T>(s);
  if (!v) throw parse_error::at_line(line, what + ": bad field '" + std::string(s) + "'");
  return *v;
}

}  // namespace detail

inline std::vector<QuoteEvent> parse_quotes_csv(std::string_view text, const std::string& what = "quotes") {
  auto q = detail::parse_rows<QuoteEvent>(text, "ts_ms,bid,ask", 3, what, [&](auto& f, std::size_t line) {
    QuoteEvent e{detail::field<Timestamp>(f[0], line, what), detail::field<Price>(f[1], line, what),
                 detail::field<Price>(f[2], line, what)};
    if (e.bid >= e.ask) throw integrity_error(what + ": line " + std::to_string(line) + ": crossed quote");
    return e;
  });
  require_sorted(q, what.c_str());
  return q;
}

inline std::vector<TradeEvent> parse_trades_csv(std::string_view text, const std::string& what = "trades") {
  auto t = detail::parse_rows<TradeEvent>(text, "ts_ms,sign,volume,price", 4, what, [&](auto& f, std::size_t line) {
    TradeEvent e{detail::field<Timestamp>(f[0], line, what), detail::field<int>(f[1], line, what),
                 detail::field<Volume>(f[2], line, what), detail::field<Price>(f[3], line, what)};
    if (e.sign != 1 && e.sign != -1) throw parse_error::at_line(line, what + ": sign must be +1 or -1");
    if (e.volume == 0) throw parse_error::at_line(line, what + ": volume must be > 0");
    return e;
  });
  require_sorted(t, what.c_str());
  return t;
}

/// quotes/<SYM>.csv and trades/<SYM>.csv for every stock.
inline void write_series(const fs::path& quotes_dir, const fs::path& trades_dir,
                         std::span<const StockSeries> stocks) {
  for (const auto& s : stocks) {
    write_file(quotes_dir / (s.symbol + ".csv"), quotes_csv(s.quotes));
    write_file(trades_dir / (s.symbol + ".csv"), trades_csv(s.trades));
  }
}

/// Stocks found in either directory, sorted by symbol; a file absent from
/// one side gives an empty series.
inline std::vector<StockSeries> read_series(const fs::path& quotes_dir, const fs::path& trades_dir) {
  std::vector<std::string> symbols;
  for (const auto& dir : {quotes_dir, trades_dir}) {
    if (!fs::is_directory(dir)) throw io_error("not a directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".csv") symbols.push_back(e.path().stem().string());
  }
  std::sort(symbols.begin(), symbols.end());
  symbols.erase(std::unique(symbols.begin(), symbols.end()), symbols.end());
  std::vector<StockSeries> out;
  for (const auto& sym : symbols) {
    StockSeries s{sym, {}, {}};
    if (auto p = quotes_dir / (sym + ".csv"); fs::exists(p)) s.quotes = parse_quotes_csv(read_text_file(p.string()), p.string());
    if (auto p = trades_dir / (sym + ".csv"); fs::exists(p)) s.trades = parse_trades_csv(read_text_file(p.string()), p.string());
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVD triples and samples
// ---------------------------------------------------------------------------

inline std::string singular_values_csv(std::span<const double> s) {
  std::string out = "k,s\n";
  for (std::size_t k = 0; k < s.size(); ++k) out += std::to_string(k + 1) + ',' + format_double(s[k]) + '\n';
  return out;
}

inline std::vector<double> parse_singular_values_csv(std::string_view text, const std::string& what = "singular values") {
  return detail::parse_rows<double>(text, "k,s", 2, what, [&](auto& f, std::size_t line) {
    return detail::field<double>(f[1], line, what);
  });
}

inline void write_svd(const fs::path& u, const fs::path& s, const fs::path& v,
                      const std::vector<std::string>& symbols, const SvdResult& d) {
  const auto cols = factor_labels(d.s.size());
  write_file(u, matrix_csv(symbols, cols, d.u));
  write_file(s, singular_values_csv(d.s));
  write_file(v, matrix_csv(symbols, cols, d.v));
}

inline SvdResult read_svd(const fs::path& u, const fs::path& s, const fs::path& v) {
  SvdResult d;
  d.u = read_matrix_csv(u).values;
  d.v = read_matrix_csv(v).values;
  d.s = parse_singular_values_csv(read_text_file(s.string()), s.string());
  if (d.u.rows() != d.s.size() || d.v.rows() != d.s.size() || !d.u.square() || !d.v.square())
    throw incompatible_error("svd files disagree in size: " + u.string());
  return d;
}

/// A labeled matrix (present cells pooled row-major) or one value per line.
inline std::vector<double> parse_sample(std::string_view text, const std::string& what = "sample") {
  if (text.starts_with(',')) {
    const LabeledMatrix m = parse_matrix_csv(text, what);
    std::vector<double> out;
    for (std::size_t k = 0; k < m.missing.size(); ++k)
      if (!m.missing[k]) out.push_back(m.values.values()[k]);
    return out;
  }
  auto lines = split_lines(text);
  std::vector<double> out;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    auto l = trim(lines[k]);
    if (l.empty() || (k == 0 && l == "value")) continue;
    out.push_back(detail::field<double>(l, k + 1, what));
  }
  return out;
}

inline std::string sample_csv(std::span<const double> x) {
  std::string out = "value\n";
  for (double v : x) out += format_double(v) + '\n';
  return out;
}

/// Bin centre, empirical density and both fitted densities per row.
inline std::string density_csv(const DensityEstimate& d, const NormalParams* normal, const TlsParams* tls) {
  std::string out = "center,empirical,normal,tls\n";
  for (std::size_t k = 0; k < d.bins(); ++k) {
    const double x = d.center(k);
    out += format_double(x) + ',' + format_double(d.densities[k]) + ',';
    if (normal) out += format_double(normal_pdf(x, normal->mu, normal->sigma));
    out += ',';
    if (tls) out += format_double(tls_pdf(x, *tls));
    out += '\n';
  }
  return out;
}

/// "row,col,value" triples, 1-based factor indices.
inline std::string heatmap_csv(const Matrix& c) {
  std::string out = "row,col,value\n";
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (std::size_t k = 0; k < c.cols(); ++k)
      out += std::to_string(r + 1) + ',' + std::to_string(k + 1) + ',' + format_double(c(r, k)) + '\n';
  return out;
}

}  // namespace impactlab
