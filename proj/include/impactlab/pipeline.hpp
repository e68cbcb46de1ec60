#pragma once

// End-to-end batch run: replay → classify → respond → svd → fit → density →
// overlap → null → report. Every stage reads its inputs from and writes its
// outputs to the output directory, so any stage can be rerun on its own.
// A stage is skipped when its stamp in `.stages/` records the same
// fingerprint (parameters plus upstream output hashes) and every output it
// lists is still on disk with the recorded hash.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <thread>

#include "json.hpp"

#include "impactlab/classify.hpp"
#include "impactlab/error.hpp"
#include "impactlab/io.hpp"
#include "impactlab/kv.hpp"
#include "impactlab/lob.hpp"
#include "impactlab/overlap.hpp"
#include "impactlab/response.hpp"
#include "impactlab/statfit.hpp"
#include "impactlab/svd.hpp"

namespace impactlab {

inline constexpr std::string_view kVersion = "1.0.0";

inline const std::vector<std::string>& nasdaq96() {
  static const std::vector<std::string> s = {
      "AAL",  "AAPL", "ADBE", "ADI",   "ADP",  "ADSK", "AKAM", "ALXN",  "AMAT", "AMGN", "AMZN", "ATVI",
      "AVGO", "BBBY", "BIDU", "BIIB",  "BMRN", "CA",   "CELG", "CERN",  "CHKP", "CHRW", "CHTR", "CMCSA",
      "COST", "CSCO", "CTSH", "CTXS",  "DISCA", "DISH", "DLTR", "EA",   "EBAY", "EQIX", "ESRX", "EXPD",
      "FAST", "FB",   "FISV", "FOXA",  "GILD", "GOOG", "GRMN", "HSIC",  "ILMN", "INTC", "INTU", "ISRG",
      "JD",   "KHC",  "KLAC", "LBTYA", "LLTC", "LMCA", "LRCX", "LVNTA", "MAR",  "MAT",  "MDLZ", "MNST",
      "MSFT", "MU",   "MYL",  "NFLX",  "NTAP", "NVDA", "NXPI", "ORLY",  "PAYX", "PCAR", "PCLN", "QCOM",
      "REGN", "ROST", "SBAC", "SBUX",  "SIRI", "SNDK", "SPLS", "SRCL",  "STX",  "SYMC", "TRIP", "TSCO",
      "TSLA", "TXN",  "VIAB", "VIP",   "VOD",  "VRSK", "VRTX", "WDC",   "WFM",  "WYNN", "XLNX", "YHOO"};
  return s;
}

/// Symbols one per line; '#' comments and blank lines ignored.
inline std::vector<std::string> parse_universe(std::string_view text) {
  std::vector<std::string> out;
  auto lines = split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    auto l = lines[k];
    if (auto h = l.find('#'); h != std::string_view::npos) l = l.substr(0, h);
    l = trim(l);
    if (l.empty()) continue;
    if (!detail::valid_symbol(l)) throw parse_error::at_line(k + 1, "universe: bad symbol '" + std::string(l) + "'");
    out.emplace_back(l);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline unsigned default_workers() {
  if (const char* env = std::getenv("IMPACTLAB_WORKERS")) {
    if (auto v = parse_number<unsigned>(env); v && *v > 0) return *v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct DensityOptions {
  BinRule rule = BinRule::freedman_diaconis;
  std::size_t bins = 0;
};

inline std::string to_string(const DensityOptions& d) {
  switch (d.rule) {
    case BinRule::freedman_diaconis: return "fd";
    case BinRule::sturges: return "sturges";
    case BinRule::fixed: return "fixed:" + std::to_string(d.bins);
  }
  return "?";
}

inline std::optional<DensityOptions> parse_density_rule(std::string_view s) {
  if (s == "fd") return DensityOptions{BinRule::freedman_diaconis, 0};
  if (s == "sturges") return DensityOptions{BinRule::sturges, 0};
  if (s.starts_with("fixed:")) {
    auto n = parse_number<std::size_t>(s.substr(6));
    if (n && *n > 0) return DensityOptions{BinRule::fixed, *n};
  }
  return std::nullopt;
}

struct PipelineConfig {
  std::vector<std::string> events;  // one file per trading day, text or binary
  std::string universe = "nasdaq96";  // "nasdaq96", "all", or a file of symbols
  Window window;
  std::vector<XKind> x_kinds{std::begin(kAllXKinds), std::end(kAllXKinds)};
  std::vector<YKind> y_kinds{std::begin(kAllYKinds), std::end(kAllYKinds)};
  std::vector<Subset> subsets{std::begin(kAllSubsets), std::end(kAllSubsets)};
  Subset overlap_subset = Subset::single;
  bool renormalize_signed_volume = false;
  std::size_t null_replicates = 100;
  NullFamily null_family = NullFamily::gaussian;
  DensityOptions density;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  unsigned workers = default_workers();

  fs::path base_dir;  // relative paths resolve against this

  fs::path resolve(const std::string& p) const {
    fs::path q(p);
    return q.is_absolute() || base_dir.empty() ? q : base_dir / q;
  }
  fs::path out() const { return resolve(output_dir); }

  std::vector<ResponseKey> keys() const {
    std::vector<ResponseKey> k;
    for (auto x : x_kinds)
      for (auto y : y_kinds)
        for (auto s : subsets) k.push_back({x, y, s});
    return k;
  }
  bool overlap_enabled() const {
    auto has = [&](XKind x) { return std::find(x_kinds.begin(), x_kinds.end(), x) != x_kinds.end(); };
    return has(XKind::midpoint) && has(XKind::spread) &&
           std::find(subsets.begin(), subsets.end(), overlap_subset) != subsets.end();
  }
};

inline const std::vector<std::string>& pipeline_keys() {
  static const std::vector<std::string> k = {
      "events", "universe", "window", "x_kinds", "y_kinds", "subsets", "overlap_subset",
      "renormalize_signed_volume", "null_replicates", "null_family", "density_rule", "output_dir",
      "seed", "workers"};
  return k;
}

inline std::string window_string(const Window& w) {
  std::string s;
  if (w.start != Window{}.start) s += std::to_string(w.start);
  s += ':';
  if (w.end != Window{}.end) s += std::to_string(w.end);
  return s;
}

template <typename E, typename R>
std::string join_kinds(const std::vector<E>& v, R&& name) {
  std::string s;
  for (const auto& e : v) s += (s.empty() ? "" : ",") + name(e);
  return s;
}

/// Every key with its effective value, in a fixed order.
inline std::string serialize_config(const PipelineConfig& c) {
  std::string s;
  auto put = [&](std::string_view k, const std::string& v) { s += std::string(k) + " = " + v + '\n'; };
  std::string ev;
  for (const auto& e : c.events) ev += (ev.empty() ? "" : ",") + e;
  put("events", ev);
  put("universe", c.universe);
  put("window", window_string(c.window));
  put("x_kinds", join_kinds(c.x_kinds, [](XKind x) { return to_string(x); }));
  put("y_kinds", join_kinds(c.y_kinds, [](YKind y) { return to_string(y); }));
  put("subsets", join_kinds(c.subsets, [](Subset x) { return to_string(x); }));
  put("overlap_subset", to_string(c.overlap_subset));
  put("renormalize_signed_volume", c.renormalize_signed_volume ? "true" : "false");
  put("null_replicates", std::to_string(c.null_replicates));
  put("null_family", to_string(c.null_family));
  put("density_rule", to_string(c.density));
  put("output_dir", c.output_dir);
  put("seed", std::to_string(c.seed));
  put("workers", std::to_string(c.workers));
  return s;
}

struct ConfigCheck {
  PipelineConfig config;
  std::vector<std::string> errors;
  bool ok() const { return errors.empty(); }
};

/// Parses and checks a config; every problem is listed, none stops the scan.
inline ConfigCheck check_config(std::string_view text, const fs::path& base_dir = {}) {
  ConfigCheck r;
  PipelineConfig& c = r.config;
  c.base_dir = base_dir;
  const KeyValues kv = parse_kv(text);
  r.errors = kv.errors;
  auto err = [&](const std::string& key, const std::string& msg) {
    auto it = kv.lines.find(key);
    r.errors.push_back((it != kv.lines.end() ? "line " + std::to_string(it->second) + ": " : "") + key + ": " + msg);
  };
  const auto& known = pipeline_keys();
  for (const auto& [k, v] : kv.values)
    if (std::find(known.begin(), known.end(), k) == known.end()) err(k, "unknown key");

  if (auto v = kv.get("events")) c.events = split_list(*v);
  if (c.events.empty()) r.errors.push_back("events: at least one event file required");
  for (const auto& e : c.events)
    if (!fs::is_regular_file(c.resolve(e))) err("events", "no such file '" + e + "'");

  if (auto v = kv.get("universe")) c.universe = *v;
  if (c.universe != "nasdaq96" && c.universe != "all") {
    const fs::path p = c.resolve(c.universe);
    if (!fs::is_regular_file(p)) {
      err("universe", "no such file '" + c.universe + "'");
    } else {
      try {
        if (parse_universe(read_text_file(p.string())).empty()) err("universe", "file lists no symbols");
      } catch (const error& e) {
        err("universe", e.what());
      }
    }
  }

  if (auto v = kv.get("window")) {
    auto colon = v->find(':');
    if (colon == std::string::npos) {
      err("window", "expected t0:t1");
    } else {
      auto a = trim(std::string_view(*v).substr(0, colon));
      auto b = trim(std::string_view(*v).substr(colon + 1));
      bool good = true;
      if (!a.empty()) {
        if (auto t = parse_number<Timestamp>(a)) c.window.start = *t; else good = false;
      }
      if (!b.empty()) {
        if (auto t = parse_number<Timestamp>(b)) c.window.end = *t; else good = false;
      }
      if (!good) err("window", "bad timestamp in '" + *v + "'");
      else if (c.window.start >= c.window.end) err("window", "empty window");
    }
  }

  auto kinds = [&](const char* key, auto& field, auto parse) {
    auto v = kv.get(key);
    if (!v) return;
    field.clear();
    for (const auto& item : split_list(*v)) {
      if (auto k = parse(item)) {
        if (std::find(field.begin(), field.end(), *k) == field.end()) field.push_back(*k);
      } else {
        err(key, "unknown value '" + item + "'");
      }
    }
    if (field.empty()) err(key, "selection is empty");
  };
  kinds("x_kinds", c.x_kinds, parse_x_kind);
  kinds("y_kinds", c.y_kinds, parse_y_kind);
  kinds("subsets", c.subsets, parse_subset);
  std::sort(c.x_kinds.begin(), c.x_kinds.end());
  std::sort(c.y_kinds.begin(), c.y_kinds.end());
  std::sort(c.subsets.begin(), c.subsets.end());

  if (auto v = kv.get("overlap_subset")) {
    if (auto s = parse_subset(*v)) c.overlap_subset = *s; else err("overlap_subset", "unknown value '" + *v + "'");
  }
  if (auto v = kv.get("renormalize_signed_volume")) {
    if (auto b = parse_bool(*v)) c.renormalize_signed_volume = *b; else err("renormalize_signed_volume", "expected true or false");
  }
  if (auto v = kv.get("null_replicates")) {
    if (auto n = parse_number<std::size_t>(*v)) c.null_replicates = *n; else err("null_replicates", "expected a count");
  }
  if (auto v = kv.get("null_family")) {
    if (auto f = parse_null_family(*v)) c.null_family = *f; else err("null_family", "expected gaussian, uniform or permutation");
  }
  if (auto v = kv.get("density_rule")) {
    if (auto d = parse_density_rule(*v)) c.density = *d; else err("density_rule", "expected fd, sturges or fixed:<bins>");
  }
  if (auto v = kv.get("output_dir")) {
    if (v->empty()) err("output_dir", "empty path"); else c.output_dir = *v;
  }
  if (auto v = kv.get("seed")) {
    if (auto s = parse_number<std::uint64_t>(*v)) c.seed = *s; else err("seed", "expected an unsigned integer");
  }
  if (auto v = kv.get("workers")) {
    auto w = parse_number<unsigned>(*v);
    if (w && *w > 0) c.workers = *w; else err("workers", "expected a positive integer");
  }
  return r;
}

inline ConfigCheck check_config_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) return {{}, {"cannot read config '" + path.string() + "'"}};
  return check_config(read_text_file(path.string()), path.parent_path());
}

/// Valid config or a config_error listing every problem, one per line.
inline PipelineConfig validate_config(const fs::path& path) {
  ConfigCheck r = check_config_file(path);
  if (!r.ok()) {
    std::string msg;
    for (const auto& e : r.errors) msg += (msg.empty() ? "" : "\n") + e;
    throw config_error(msg);
  }
  return r.config;
}

// ---------------------------------------------------------------------------
// Stage bookkeeping
// ---------------------------------------------------------------------------

/// A stage failure, naming the stage; `cause` keeps the original error.
class stage_error : public error {
public:
  stage_error(std::string stage, std::exception_ptr cause, const std::string& what)
    : error("stage " + stage + ": " + what), stage_(std::move(stage)), cause_(std::move(cause)) {}
  const std::string& stage() const noexcept { return stage_; }
  std::exception_ptr cause() const noexcept { return cause_; }

private:
  std::string stage_;
  std::exception_ptr cause_;
};

struct StageRecord {
  std::string name;
  bool cached = false;
  double seconds = 0.0;
  std::string fingerprint;
  std::map<std::string, std::string> outputs;  // relative path → sha256
  std::string digest() const {
    std::string s;
    for (const auto& [p, h] : outputs) s += p + ' ' + h + '\n';
    return sha256_hex(s);
  }
};

class Bundle {
public:
  explicit Bundle(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const noexcept { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }

  void write(const std::string& rel, std::string_view content) {
    write_file(path(rel), content);
    if (current_) current_->outputs[rel] = sha256_hex(content);
  }
  std::string read(const std::string& rel) const { return read_text_file(path(rel).string()); }

  const StageRecord& stage(const std::string& name) const {
    for (const auto& r : records_)
      if (r.name == name) return r;
    throw error("stage " + name + " has not run");
  }
  const std::vector<StageRecord>& records() const noexcept { return records_; }

  /// Runs `body` unless the stamp shows identical inputs and intact outputs.
  void run(const std::string& name, const std::string& params, const std::vector<std::string>& deps,
           const std::function<void()>& body, bool always = false) {
    std::string fp = std::string(kVersion) + '\n' + name + '\n' + params + '\n';
    for (const auto& d : deps) fp += d + ' ' + stage(d).digest() + '\n';
    StageRecord rec{name, false, 0.0, sha256_hex(fp), {}};
    const auto t0 = std::chrono::steady_clock::now();
    if (!always && load_stamp(rec)) {
      rec.cached = true;
    } else {
      current_ = &rec;
      try {
        body();
      } catch (const stage_error&) {
        current_ = nullptr;
        throw;
      } catch (const std::exception& e) {
        current_ = nullptr;
        throw stage_error(name, std::current_exception(), e.what());
      }
      current_ = nullptr;
      if (!always) save_stamp(rec);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    records_.push_back(std::move(rec));
  }

private:
  fs::path stamp_path(const std::string& name) const { return root_ / ".stages" / (name + ".json"); }

  bool load_stamp(StageRecord& rec) const {
    const fs::path p = stamp_path(rec.name);
    if (!fs::exists(p)) return false;
    try {
      auto j = nlohmann::json::parse(read_text_file(p.string()));
      if (j.at("fingerprint").get<std::string>() != rec.fingerprint) return false;
      std::map<std::string, std::string> outs = j.at("outputs").get<std::map<std::string, std::string>>();
      for (const auto& [rel, hash] : outs)
        if (!fs::is_regular_file(path(rel)) || sha256_file(path(rel)) != hash) return false;
      rec.outputs = std::move(outs);
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  void save_stamp(const StageRecord& rec) const {
    nlohmann::json j{{"fingerprint", rec.fingerprint}, {"outputs", rec.outputs}};
    write_file(stamp_path(rec.name), j.dump(1) + '\n');
  }

  fs::path root_;
  std::vector<StageRecord> records_;
  StageRecord* current_ = nullptr;
};

/// Runs f(0..n-1) on up to `workers` threads; f must write only its own slot.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& f) {
  const unsigned t = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
  if (t <= 1) {
    for (std::size_t k = 0; k < n; ++k) f(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < t; ++w)
      pool.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < n;) {
          try {
            f(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Fits and tables
// ---------------------------------------------------------------------------

struct SideFit {
  TlsParams tls;
  NormalParams normal;
  std::size_t n = 0;
};

struct SvdFit {
  SideFit u, v;
};

inline nlohmann::json to_json(const SideFit& f) {
  return {{"n", f.n},
          {"normal", {{"mu", f.normal.mu}, {"sigma", f.normal.sigma}}},
          {"tls",
           {{"mu", f.tls.mu},
            {"sigma", f.tls.sigma},
            {"beta", f.tls.beta},
            {"loglik", f.tls.loglik},
            {"converged", f.tls.converged},
            {"effectively_normal", f.tls.effectively_normal},
            {"iterations", f.tls.iterations}}}};
}

inline SideFit side_fit_from_json(const nlohmann::json& j) {
  SideFit f;
  f.n = j.at("n").get<std::size_t>();
  f.normal = {j.at("normal").at("mu").get<double>(), j.at("normal").at("sigma").get<double>()};
  const auto& t = j.at("tls");
  f.tls.mu = t.at("mu").get<double>();
  f.tls.sigma = t.at("sigma").get<double>();
  f.tls.beta = t.at("beta").get<double>();
  f.tls.loglik = t.at("loglik").get<double>();
  f.tls.converged = t.at("converged").get<bool>();
  f.tls.effectively_normal = t.at("effectively_normal").get<bool>();
  f.tls.iterations = t.at("iterations").get<int>();
  return f;
}

inline std::string fit_json(const SvdFit& f) {
  return nlohmann::json{{"U", to_json(f.u)}, {"V", to_json(f.v)}}.dump(1) + '\n';
}

inline SvdFit parse_fit_json(std::string_view text) {
  auto j = nlohmann::json::parse(text);
  return {side_fit_from_json(j.at("U")), side_fit_from_json(j.at("V"))};
}

inline SideFit fit_side(std::span<const double> x) {
  return {fit_tls(x), fit_normal(x), x.size()};
}

inline SvdFit fit_svd(const SvdResult& d) {
  const auto u = collect_entries(d, VectorSide::left);
  const auto v = collect_entries(d, VectorSide::right);
  return {fit_side(u), fit_side(v)};
}

/// One row of a fit-parameter table.
struct FitRow {
  std::string group;  // e.g. "trade signs"
  std::string label;  // e.g. "all"
  double u_mu, u_sigma, u_beta;
  double v_mu, v_sigma, v_beta;
};

inline std::string fit_table_csv(std::string_view group_header, std::string_view label_header,
                                 std::span<const FitRow> rows) {
  std::string s = std::string(group_header) + ',' + std::string(label_header) +
                  ",U_mu,U_sigma,U_beta,V_mu,V_sigma,V_beta\n";
  for (const auto& r : rows) {
    s += r.group + ',' + r.label + ',' + format_fixed(r.u_mu, 5) + ',' + format_fixed(r.u_sigma, 3) + ',' +
         format_fixed(r.u_beta, 3) + ',' + format_fixed(r.v_mu, 5) + ',' + format_fixed(r.v_sigma, 3) + ',' +
         format_fixed(r.v_beta, 3) + '\n';
  }
  return s;
}

inline FitRow fit_row(std::string group, std::string label, const SvdFit& f) {
  return {std::move(group), std::move(label), f.u.tls.mu, f.u.tls.sigma, f.u.tls.beta,
          f.v.tls.mu,       f.v.tls.sigma,    f.v.tls.beta};
}

inline std::string response_group(YKind y) {
  switch (y) {
    case YKind::sign: return "trade signs";
    case YKind::volume: return "trade volumes";
    case YKind::signed_volume: return "signed trade volumes";
  }
  return "?";
}

inline std::string factor_group(YKind y) {
  switch (y) {
    case YKind::sign: return "trade signs";
    case YKind::volume: return "traded volumes";
    case YKind::signed_volume: return "signed volumes";
  }
  return "?";
}

inline std::string overlap_group(OverlapKind k) {
  switch (k) {
    case OverlapKind::mm: return "factors of price change";
    case OverlapKind::ss: return "factors of liquidity change";
    case OverlapKind::ms: return "factors of price change and of liquidity change";
  }
  return "?";
}

inline constexpr std::string_view kResponseTableHeader[2] = {"response_to", "case"};
inline constexpr std::string_view kOverlapTableHeader[2] = {"correlation_between", "factors_related_to"};

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

inline std::string response_stem(const ResponseKey& k) { return "R_" + k.name(); }
inline std::string overlap_stem(OverlapKind k, YKind y) { return "C_" + to_string(k) + "_" + to_string(y); }

inline std::vector<OrderEvent> read_events_file(const fs::path& p) {
  const std::string bytes = read_text_file(p.string());
  try {
    if (std::string_view(bytes).starts_with(kEventHeader)) return parse_events(bytes);
    return decode_binary(bytes);
  } catch (const parse_error& e) {
    throw e.in(p.string());
  }
}

struct NullSummary {
  std::string target;
  double empirical_beta = 0.0;
  std::vector<double> null_betas;  // by replicate
};

struct ReportBundle {
  fs::path root;
  std::vector<std::string> symbols;
  std::vector<StageRecord> stages;
  std::map<std::string, std::string> files;  // relative path → sha256, manifest scope
};

/// Runs every stage in order; throws stage_error naming the failing stage.
inline ReportBundle run_pipeline(const PipelineConfig& cfg) {
  Bundle b(cfg.out());
  fs::create_directories(b.root());
  const auto keys = cfg.keys();
  const std::size_t days = cfg.events.size();
  auto day_dir = [](std::size_t d) { return "series/day" + std::to_string(d + 1); };
  std::vector<std::string> symbols;

  // replay
  {
    std::string params = "window=" + window_string(cfg.window) + "\nuniverse=" + cfg.universe + '\n';
    std::vector<std::string> universe;
    if (cfg.universe == "nasdaq96") {
      universe = nasdaq96();
    } else if (cfg.universe != "all") {
      universe = parse_universe(read_text_file(cfg.resolve(cfg.universe).string()));
      for (const auto& s : universe) params += s + ' ';
    }
    for (std::size_t d = 0; d < days; ++d) params += "events" + std::to_string(d) + '=' + sha256_file(cfg.resolve(cfg.events[d])) + '\n';
    b.run("replay", params, {}, [&] {
      std::vector<std::vector<StockSeries>> per_day;
      std::set<std::string> seen;
      for (std::size_t d = 0; d < days; ++d) {
        auto events = read_events_file(cfg.resolve(cfg.events[d]));
        auto stocks = replay(events, cfg.window);
        std::erase_if(stocks, [&](const StockSeries& s) {
          return cfg.universe != "all" && !std::binary_search(universe.begin(), universe.end(), s.symbol);
        });
        for (const auto& s : stocks) seen.insert(s.symbol);
        per_day.push_back(std::move(stocks));
      }
      if (seen.size() < 2)
        throw degenerate_error("fewer than 2 universe stocks present in the events (" +
                               std::to_string(seen.size()) + ")");
      std::string listing = "symbol\n";
      for (const auto& s : seen) listing += s + '\n';
      b.write("series/symbols.csv", listing);
      for (std::size_t d = 0; d < days; ++d) {
        std::string summary = "symbol,quotes,trades\n";
        for (const auto& sym : seen) {
          auto it = std::find_if(per_day[d].begin(), per_day[d].end(), [&](auto& s) { return s.symbol == sym; });
          StockSeries s = it != per_day[d].end() ? *it : StockSeries{sym, {}, {}};
          b.write(day_dir(d) + "/quotes/" + sym + ".csv", quotes_csv(s.quotes));
          b.write(day_dir(d) + "/trades/" + sym + ".csv", trades_csv(s.trades));
          summary += sym + ',' + std::to_string(s.quotes.size()) + ',' + std::to_string(s.trades.size()) + '\n';
        }
        b.write(day_dir(d) + "/summary.csv", summary);
      }
    });
    const std::string listing = b.read("series/symbols.csv");
    for (const auto& s : split_lines(listing))
      if (!s.empty() && s != "symbol") symbols.emplace_back(s);
  }
  auto load_day = [&](std::size_t d) {
    return read_series(b.path(day_dir(d) + "/quotes"), b.path(day_dir(d) + "/trades"));
  };

  // classify
  b.run("classify", "", {"replay"}, [&] {
    PairWeights pooled;
    for (std::size_t d = 0; d < days; ++d) {
      const auto stocks = load_day(d);
      PairWeights w = pair_weights(stocks);
      const std::string rel = "weights/day" + std::to_string(d + 1);
      b.write(rel + ".csv", weights_csv(w));
      b.write(rel + ".counts.csv", label_counts_csv(w));
      if (d == 0) {
        pooled = w;
      } else {
        for (std::size_t k = 0; k < w.counts.size(); ++k) {
          pooled.counts[k].single += w.counts[k].single;
          pooled.counts[k].multiple += w.counts[k].multiple;
          pooled.counts[k].dropped += w.counts[k].dropped;
        }
      }
    }
    b.write("weights/weights.csv", weights_csv(pooled));
    b.write("weights/weights.counts.csv", label_counts_csv(pooled));
  });

  // respond
  {
    std::string params = "renormalize_signed_volume=" + std::to_string(cfg.renormalize_signed_volume) + '\n';
    for (const auto& k : keys) params += k.name() + '\n';
    b.run("respond", params, {"replay"}, [&] {
      std::map<ResponseKey, std::vector<ResponseMatrix>> daily;
      ResponseOptions opt{cfg.renormalize_signed_volume};
      for (std::size_t d = 0; d < days; ++d) {
        const auto stocks = load_day(d);
        auto r = compute_responses(stocks, keys, opt);
        for (auto& [k, m] : r.matrices) daily[k].push_back(std::move(m));
      }
      std::string meta = "matrix,missing,one_sided\n";
      for (const auto& k : keys) {
        const ResponseMatrix m = average_days(daily.at(k));
        const auto mask = missing_mask(m);
        b.write("responses/" + response_stem(k) + ".csv", matrix_csv(m.symbols, m.symbols, m.values, &mask));
        b.write("responses/" + response_stem(k) + ".json", response_sidecar(m));
        meta += response_stem(k) + ',' + std::to_string(m.missing_count()) + ',' + std::to_string(m.one_sided) + '\n';
      }
      b.write("responses/summary.csv", meta);
    });
  }
  auto load_response = [&](const ResponseKey& k) {
    return read_response(b.path("responses/" + response_stem(k) + ".csv"), k);
  };
  // missing entries enter the decomposition as zero
  auto imputed = [&](const ResponseKey& k) {
    ResponseMatrix r = load_response(k);
    Matrix m = r.values;
    impute_zero(m, missing_mask(r));
    return m;
  };

  // svd
  b.run("svd", "", {"respond"}, [&] {
    std::vector<SvdResult> out(keys.size());
    parallel_for(keys.size(), cfg.workers, [&](std::size_t k) { out[k] = svd(imputed(keys[k])); });
    std::string meta = "matrix,sweeps,imputed\n";
    for (std::size_t k = 0; k < keys.size(); ++k) {
      const auto stem = "svd/" + response_stem(keys[k]);
      const auto cols = factor_labels(out[k].s.size());
      b.write(stem + ".U.csv", matrix_csv(symbols, cols, out[k].u));
      b.write(stem + ".S.csv", singular_values_csv(out[k].s));
      b.write(stem + ".V.csv", matrix_csv(symbols, cols, out[k].v));
      meta += response_stem(keys[k]) + ',' + std::to_string(out[k].sweeps) + ',' +
              std::to_string(load_response(keys[k]).missing_count()) + '\n';
    }
    b.write("svd/summary.csv", meta);
  });
  auto load_svd = [&](const std::string& stem) {
    return read_svd(b.path(stem + ".U.csv"), b.path(stem + ".S.csv"), b.path(stem + ".V.csv"));
  };

  // fit
  b.run("fit", "", {"svd"}, [&] {
    std::vector<SvdFit> out(keys.size());
    parallel_for(keys.size(), cfg.workers,
                 [&](std::size_t k) { out[k] = fit_svd(load_svd("svd/" + response_stem(keys[k]))); });
    for (std::size_t k = 0; k < keys.size(); ++k) b.write("fits/" + response_stem(keys[k]) + ".json", fit_json(out[k]));
  });
  auto load_fit = [&](const std::string& rel) { return parse_fit_json(b.read(rel)); };

  // density
  b.run("density", "rule=" + to_string(cfg.density), {"svd", "fit"}, [&] {
    const BinSpec spec{cfg.density.rule, cfg.density.bins};
    for (const auto& k : keys) {
      const auto d = load_svd("svd/" + response_stem(k));
      const auto f = load_fit("fits/" + response_stem(k) + ".json");
      const auto u = collect_entries(d, VectorSide::left);
      const auto v = collect_entries(d, VectorSide::right);
      b.write("density/" + response_stem(k) + ".U.csv", density_csv(empirical_density(u, spec), &f.u.normal, &f.u.tls));
      b.write("density/" + response_stem(k) + ".V.csv", density_csv(empirical_density(v, spec), &f.v.normal, &f.v.tls));
    }
  });

  // overlap
  const bool overlap_on = cfg.overlap_enabled();
  const OverlapKind overlap_kinds[] = {OverlapKind::mm, OverlapKind::ss, OverlapKind::ms};
  if (overlap_on) {
    b.run("overlap", "subset=" + to_string(cfg.overlap_subset), {"svd"}, [&] {
      for (auto y : cfg.y_kinds) {
        const auto um = normalize_factors(load_svd("svd/" + response_stem({XKind::midpoint, y, cfg.overlap_subset})).u);
        const auto us = normalize_factors(load_svd("svd/" + response_stem({XKind::spread, y, cfg.overlap_subset})).u);
        for (auto kind : overlap_kinds) {
          const OverlapMatrix c = kind == OverlapKind::mm   ? overlap_matrix(um, um, kind)
                                  : kind == OverlapKind::ss ? overlap_matrix(us, us, kind)
                                                            : overlap_matrix(um, us, kind);
          const auto stem = "overlap/" + overlap_stem(kind, y);
          const auto labels = factor_labels(c.c.rows());
          b.write(stem + ".csv", matrix_csv(labels, labels, c.c));
          b.write(stem + ".heatmap.csv", heatmap_csv(c.c));
          const SvdResult d = decompose_overlap(c);
          b.write(stem + ".U.csv", matrix_csv(labels, labels, d.u));
          b.write(stem + ".S.csv", singular_values_csv(d.s));
          b.write(stem + ".V.csv", matrix_csv(labels, labels, d.v));
          b.write(stem + ".fit.json", fit_json(fit_svd(d)));
        }
      }
    });
  }

  // null
  if (cfg.null_replicates > 0) {
    std::string params = "replicates=" + std::to_string(cfg.null_replicates) + "\nfamily=" + to_string(cfg.null_family) +
                         "\nseed=" + std::to_string(cfg.seed) + '\n';
    std::vector<std::string> deps = {"respond", "fit"};
    if (overlap_on) deps.push_back("overlap");
    b.run("null", params, deps, [&] {
      std::vector<Matrix> inputs;
      for (const auto& k : keys) inputs.push_back(imputed(k));
      std::vector<NullSummary> targets;
      for (const auto& k : keys)
        targets.push_back({response_stem(k), load_fit("fits/" + response_stem(k) + ".json").u.tls.beta, {}});
      if (overlap_on)
        for (auto y : cfg.y_kinds)
          for (auto kind : overlap_kinds)
            targets.push_back({overlap_stem(kind, y), load_fit("overlap/" + overlap_stem(kind, y) + ".fit.json").u.tls.beta, {}});

      const std::size_t reps = cfg.null_replicates;
      std::vector<std::vector<double>> betas(reps);
      std::vector<std::vector<Matrix>> first_heatmaps(1);
      parallel_for(reps, cfg.workers, [&](std::size_t r) {
        const std::uint64_t rs = derive_seed(cfg.seed, r);
        std::vector<double>& out = betas[r];
        for (std::size_t k = 0; k < keys.size(); ++k)
          out.push_back(fit_tls(collect_entries(svd(random_response(inputs[k], derive_seed(rs, k), cfg.null_family)),
                                                VectorSide::left)).beta);
        if (!overlap_on) return;
        for (std::size_t yi = 0; yi < cfg.y_kinds.size(); ++yi) {
          const auto y = cfg.y_kinds[yi];
          auto idx = [&](XKind x) {
            return static_cast<std::size_t>(
                std::find(keys.begin(), keys.end(), ResponseKey{x, y, cfg.overlap_subset}) - keys.begin());
          };
          const OverlapSet set = null_overlap_pipeline(inputs[idx(XKind::midpoint)], inputs[idx(XKind::spread)],
                                                       derive_seed(rs, keys.size() + yi), cfg.null_family);
          for (const OverlapMatrix* c : {&set.mm, &set.ss, &set.ms}) {
            out.push_back(fit_tls(collect_entries(decompose_overlap(*c), VectorSide::left)).beta);
            if (r == 0) first_heatmaps[0].push_back(c->c);
          }
        }
      });

      std::string long_form = "replicate,target,beta\n";
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t t = 0; t < targets.size(); ++t) {
          targets[t].null_betas.push_back(betas[r][t]);
          long_form += std::to_string(r) + ',' + targets[t].target + ',' + format_double(betas[r][t]) + '\n';
        }
      b.write("null/betas.csv", long_form);
      std::string summary = "target,empirical_U_beta,null_U_beta_median,null_U_beta_min,null_U_beta_max,replicates,heavier_than_null\n";
      for (auto& t : targets) {
        std::vector<double> s = t.null_betas;
        std::sort(s.begin(), s.end());
        const double med = quantile_sorted(s, 0.5);
        summary += t.target + ',' + format_double(t.empirical_beta) + ',' + format_double(med) + ',' +
                   format_double(s.front()) + ',' + format_double(s.back()) + ',' + std::to_string(s.size()) + ',' +
                   (t.empirical_beta < med ? "true" : "false") + '\n';
      }
      b.write("null/summary.csv", summary);
      if (overlap_on) {
        std::size_t h = 0;
        for (auto y : cfg.y_kinds)
          for (auto kind : overlap_kinds) b.write("null/" + overlap_stem(kind, y) + ".heatmap.csv", heatmap_csv(first_heatmaps[0][h++]));
      }
    });
  }

  // report
  ReportBundle rb{b.root(), symbols, {}, {}};
  b.run("report", "", {}, [&] {
    std::map<std::string, std::string> files;
    for (const auto& r : b.records())
      for (const auto& [p, h] : r.outputs) files[p] = h;
    auto emit = [&](const std::string& rel, const std::string& content) {
      b.write(rel, content);
      files[rel] = sha256_hex(content);
    };
    for (auto x : cfg.x_kinds) {
      std::vector<FitRow> rows;
      for (auto y : cfg.y_kinds)
        for (auto s : cfg.subsets)
          rows.push_back(fit_row(response_group(y), to_string(s), load_fit("fits/" + response_stem({x, y, s}) + ".json")));
      emit(x == XKind::midpoint ? "tables/table1_price.csv" : "tables/table2_liquidity.csv",
           fit_table_csv(kResponseTableHeader[0], kResponseTableHeader[1], rows));
    }
    if (overlap_on) {
      std::vector<FitRow> rows;
      for (auto kind : overlap_kinds)
        for (auto y : cfg.y_kinds)
          rows.push_back(fit_row(overlap_group(kind), factor_group(y), load_fit("overlap/" + overlap_stem(kind, y) + ".fit.json")));
      emit("tables/table4_factors.csv", fit_table_csv(kOverlapTableHeader[0], kOverlapTableHeader[1], rows));
    }

    PipelineConfig echo = cfg;
    echo.output_dir = ".";
    echo.workers = 1;
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& r : b.records()) stages.push_back({{"name", r.name}, {"fingerprint", r.fingerprint}});
    nlohmann::json manifest{{"tool", "impactlab"},
                            {"version", kVersion},
                            {"config", serialize_config(echo)},
                            {"seed", cfg.seed},
                            {"null_replicates", cfg.null_replicates},
                            {"symbols", symbols},
                            {"overlap", overlap_on},
                            {"stages", stages},
                            {"files", files}};
    b.write("manifest.json", manifest.dump(1) + '\n');
    rb.files = std::move(files);
  }, true);

  rb.stages = b.records();
  nlohmann::json timings = nlohmann::json::array();
  double total = 0.0;
  for (const auto& r : rb.stages) {
    timings.push_back({{"stage", r.name}, {"cached", r.cached}, {"seconds", r.seconds}});
    total += r.seconds;
  }
  write_file(b.path("timings.json"), nlohmann::json{{"stages", timings}, {"total_seconds", total}}.dump(1) + '\n');
  return rb;
}

}  // namespace impactlab
