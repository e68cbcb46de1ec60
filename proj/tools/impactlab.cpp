#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "impactlab/impactlab.hpp"

namespace il = impactlab;
namespace fs = std::filesystem;

namespace {

int exit_code_for(std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const il::stage_error& e) {
    return exit_code_for(e.cause());
  } catch (const il::config_error&) {
    return 2;
  } catch (const il::io_error&) {
    return 2;
  } catch (const il::parse_error&) {
    return 3;
  } catch (const il::ordering_error&) {
    return 3;
  } catch (const il::integrity_error&) {
    return 3;
  } catch (const il::degenerate_error&) {
    return 3;
  } catch (const il::alignment_error&) {
    return 3;
  } catch (const il::empty_result_error&) {
    return 3;
  } catch (const il::convergence_error&) {
    return 4;
  } catch (const il::calibration_error&) {
    return 4;
  } catch (...) {
    return 1;
  }
}

il::Window parse_window(const std::string& s) {
  il::Window w;
  if (s.empty()) return w;
  auto colon = s.find(':');
  if (colon == std::string::npos) throw il::config_error("--window: expected t0:t1");
  auto a = s.substr(0, colon), b = s.substr(colon + 1);
  if (!a.empty()) {
    auto v = il::parse_number<il::Timestamp>(a);
    if (!v) throw il::config_error("--window: bad start '" + a + "'");
    w.start = *v;
  }
  if (!b.empty()) {
    auto v = il::parse_number<il::Timestamp>(b);
    if (!v) throw il::config_error("--window: bad end '" + b + "'");
    w.end = *v;
  }
  if (w.start >= w.end) throw il::config_error("--window: empty window");
  return w;
}

template <typename T, typename F>
T parse_choice(const std::string& flag, const std::string& s, F parse) {
  if (auto v = parse(s)) return *v;
  throw il::config_error(flag + ": unknown value '" + s + "'");
}

std::vector<double> read_sample_file(const std::string& path) {
  return il::parse_sample(il::read_text_file(path), path);
}

void write_events(const std::string& path, const std::vector<il::OrderEvent>& events, bool binary) {
  if (binary) {
    il::write_file(path, il::encode_binary(events));
  } else {
    std::ostringstream out;
    il::serialize_events(out, events);
    il::write_file(path, out.str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"impactlab: order book replay, response matrices and factor analysis"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Master seed, overrides any config");
  std::function<void()> action;

  // replay
  auto* replay = app.add_subcommand("replay", "Replay an event file into quote and trade series");
  std::string r_events, r_quotes, r_trades, r_window;
  replay->add_option("--events", r_events)->required();
  replay->add_option("--out-quotes", r_quotes)->required();
  replay->add_option("--out-trades", r_trades)->required();
  replay->add_option("--window", r_window, "t0:t1 in ms, half-open");
  replay->callback([&] {
    action = [&] {
      const auto events = il::read_events_file(r_events);
      const auto stocks = il::replay(events, parse_window(r_window));
      il::write_series(r_quotes, r_trades, stocks);
      std::size_t q = 0, t = 0;
      for (const auto& s : stocks) q += s.quotes.size(), t += s.trades.size();
      std::cout << stocks.size() << " stocks, " << q << " quotes, " << t << " trades\n";
    };
  });

  // classify
  auto* classify = app.add_subcommand("classify", "Label trades single/multiple and write w_ij");
  std::string c_quotes, c_trades, c_out;
  classify->add_option("--quotes", c_quotes)->required();
  classify->add_option("--trades", c_trades)->required();
  classify->add_option("--out", c_out)->required();
  classify->callback([&] {
    action = [&] {
      const auto stocks = il::read_series(c_quotes, c_trades);
      const auto w = il::pair_weights(stocks);
      il::write_weights(c_out, w);
      if (auto f = il::mean_single_fraction(w)) std::cout << "mean single fraction " << il::format_fixed(*f, 4) << '\n';
    };
  });

  // respond
  auto* respond = app.add_subcommand("respond", "Compute one response matrix");
  std::string p_quotes, p_trades, p_weights, p_x, p_y, p_subset, p_out;
  bool p_renorm = false;
  respond->add_option("--quotes", p_quotes)->required();
  respond->add_option("--trades", p_trades)->required();
  respond->add_option("--weights", p_weights, "w_ij csv for --subset weighted");
  respond->add_option("--x", p_x)->required()->check(CLI::IsMember({"m", "s"}));
  respond->add_option("--y", p_y)->required()->check(CLI::IsMember({"sign", "vol", "svol"}));
  respond->add_option("--subset", p_subset)->required()->check(CLI::IsMember({"all", "single", "multiple", "weighted"}));
  respond->add_option("--out", p_out)->required();
  respond->add_flag("--renormalize-svol", p_renorm, "Re-normalize the signed volume product");
  respond->callback([&] {
    action = [&] {
      const auto stocks = il::read_series(p_quotes, p_trades);
      const il::ResponseKey key{*il::parse_x_kind(p_x), *il::parse_y_kind(p_y), *il::parse_subset(p_subset)};
      const il::ResponseOptions opt{p_renorm};
      il::ResponseMatrix m;
      if (key.subset == il::Subset::weighted && !p_weights.empty()) {
        const il::ResponseKey st{key.x, key.y, il::Subset::single}, mt{key.x, key.y, il::Subset::multiple};
        const il::ResponseKey both[] = {st, mt};
        auto r = il::compute_responses(stocks, both, opt);
        const auto w = il::read_matrix_csv(p_weights);
        if (w.row_labels != r.weights.symbols || w.col_labels != r.weights.symbols)
          throw il::incompatible_error("--weights: symbols do not match the series");
        m = il::weighted_response(r.matrices.at(st), r.matrices.at(mt), w.values, w.missing);
      } else {
        m = il::response_matrix(stocks, key, opt);
      }
      il::write_response(p_out, m);
      std::cout << key.name() << ": " << m.size() << "x" << m.size() << ", " << m.missing_count() << " missing\n";
    };
  });

  // svd
  auto* svdc = app.add_subcommand("svd", "Singular value decomposition of a square matrix csv");
  std::string s_in, s_u, s_s, s_v;
  svdc->add_option("--in", s_in)->required();
  svdc->add_option("--out-u", s_u)->required();
  svdc->add_option("--out-s", s_s)->required();
  svdc->add_option("--out-v", s_v)->required();
  svdc->callback([&] {
    action = [&] {
      auto m = il::read_matrix_csv(s_in);
      const std::size_t imputed = il::impute_zero(m.values, m.missing);
      const auto d = il::svd(m.values);
      il::write_svd(s_u, s_s, s_v, m.row_labels, d);
      std::cout << d.sweeps << " sweeps, " << imputed << " missing entries set to 0\n";
    };
  });

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a normal or t location-scale density");
  std::string f_in, f_dist = "tls", f_out;
  fit->add_option("--in", f_in)->required();
  fit->add_option("--dist", f_dist)->check(CLI::IsMember({"normal", "tls"}));
  fit->add_option("--out", f_out)->required();
  int fit_status = 0;
  fit->callback([&] {
    action = [&] {
      const auto x = read_sample_file(f_in);
      nlohmann::json j;
      if (f_dist == "normal") {
        const auto p = il::fit_normal(x);
        double ll = 0.0;
        for (double v : x) ll += std::log(il::normal_pdf(v, p.mu, p.sigma));
        j = {{"mu", p.mu}, {"sigma", p.sigma}, {"beta", nullptr}, {"loglik", ll}, {"converged", true}, {"n", x.size()}};
      } else {
        const auto p = il::fit_tls(x);
        j = {{"mu", p.mu},           {"sigma", p.sigma},         {"beta", p.beta},
             {"loglik", p.loglik},   {"converged", p.converged}, {"n", x.size()},
             {"effectively_normal", p.effectively_normal}, {"iterations", p.iterations}};
        if (!p.converged) fit_status = 4;
      }
      il::write_file(f_out, j.dump(1) + '\n');
      std::cout << j.dump() << '\n';
    };
  });

  // density
  auto* density = app.add_subcommand("density", "Histogram with normal and t location-scale fits");
  std::string d_in, d_out, d_rule = "fd";
  density->add_option("--in", d_in)->required();
  density->add_option("--out", d_out)->required();
  density->add_option("--bins", d_rule, "fd, sturges or fixed:<n>");
  density->callback([&] {
    action = [&] {
      const auto x = read_sample_file(d_in);
      const auto rule = parse_choice<il::DensityOptions>("--bins", d_rule, il::parse_density_rule);
      const auto h = il::empirical_density(x, {rule.rule, rule.bins});
      const auto n = il::fit_normal(x);
      const auto t = il::fit_tls(x);
      il::write_file(d_out, il::density_csv(h, &n, &t));
    };
  });

  // overlap
  auto* overlap = app.add_subcommand("overlap", "Overlap matrix of two left singular vector sets");
  std::string o_um, o_us, o_kind, o_out, o_heat;
  overlap->add_option("--um", o_um, "U of the midpoint response")->required();
  overlap->add_option("--us", o_us, "U of the spread response")->required();
  overlap->add_option("--kind", o_kind)->required()->check(CLI::IsMember({"mm", "ss", "ms"}));
  overlap->add_option("--out", o_out)->required();
  overlap->add_option("--heatmap", o_heat, "Also write row,col,value triples");
  overlap->callback([&] {
    action = [&] {
      const auto kind = *il::parse_overlap_kind(o_kind);
      const auto um = il::normalize_factors(il::read_matrix_csv(o_um).values);
      const auto us = il::normalize_factors(il::read_matrix_csv(o_us).values);
      const auto c = kind == il::OverlapKind::mm   ? il::overlap_matrix(um, um, kind)
                     : kind == il::OverlapKind::ss ? il::overlap_matrix(us, us, kind)
                                                   : il::overlap_matrix(um, us, kind);
      const auto labels = il::factor_labels(c.c.rows());
      il::write_file(o_out, il::matrix_csv(labels, labels, c.c));
      if (!o_heat.empty()) il::write_file(o_heat, il::heatmap_csv(c.c));
    };
  });

  // null
  auto* null = app.add_subcommand("null", "Overlap matrices of randomized response matrices");
  std::string n_rm, n_rs, n_dir, n_family = "gaussian";
  std::size_t n_reps = 100;
  std::uint64_t n_seed = 1;
  null->add_option("--rm", n_rm, "Midpoint response matrix")->required();
  null->add_option("--rs", n_rs, "Spread response matrix")->required();
  null->add_option("--replicates", n_reps)->check(CLI::PositiveNumber);
  null->add_option("--seed", n_seed);
  null->add_option("--family", n_family)->check(CLI::IsMember({"gaussian", "uniform", "permutation"}));
  null->add_option("--out-dir", n_dir)->required();
  null->callback([&] {
    action = [&] {
      if (seed) n_seed = *seed;
      const auto family = *il::parse_null_family(n_family);
      auto load = [](const std::string& p) {
        auto m = il::read_matrix_csv(p);
        il::impute_zero(m.values, m.missing);
        return m.values;
      };
      const auto rm = load(n_rm), rs = load(n_rs);
      std::vector<std::array<double, 3>> betas(n_reps);
      std::optional<il::OverlapSet> first;
      for (std::size_t r = 0; r < n_reps; ++r) {
        const auto set = il::null_overlap_pipeline(rm, rs, il::derive_seed(n_seed, r), family);
        std::size_t k = 0;
        for (const auto* c : {&set.mm, &set.ss, &set.ms})
          betas[r][k++] = il::fit_tls(il::collect_entries(il::decompose_overlap(*c), il::VectorSide::left)).beta;
        if (r == 0) first = set;
      }
      const fs::path dir(n_dir);
      std::string csv = "replicate,C_mm_U_beta,C_ss_U_beta,C_ms_U_beta\n";
      for (std::size_t r = 0; r < n_reps; ++r)
        csv += std::to_string(r) + ',' + il::format_double(betas[r][0]) + ',' + il::format_double(betas[r][1]) + ',' +
               il::format_double(betas[r][2]) + '\n';
      il::write_file(dir / "betas.csv", csv);
      const auto labels = il::factor_labels(rm.rows());
      for (const auto* c : {&first->mm, &first->ss, &first->ms}) {
        const std::string stem = "C_" + il::to_string(c->kind);
        il::write_file(dir / (stem + ".csv"), il::matrix_csv(labels, labels, c->c));
        il::write_file(dir / (stem + ".heatmap.csv"), il::heatmap_csv(c->c));
      }
    };
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic event stream");
  std::string y_config, y_out;
  bool y_binary = false, y_calibrate = false;
  synth->add_option("--config", y_config)->required();
  synth->add_option("--out", y_out)->required();
  synth->add_flag("--binary", y_binary, "Length-prefixed binary records");
  synth->add_flag("--calibrate", y_calibrate, "Tune burst_prob to single_fraction_target first");
  synth->callback([&] {
    action = [&] {
      auto cfg = il::parse_market_config(il::read_text_file(y_config));
      if (seed) cfg.seed = *seed;
      if (y_calibrate) {
        auto cal = il::calibrate_single_fraction(cfg);
        cfg = cal.config;
        std::cout << "burst_prob = " << il::format_double(cfg.burst_prob) << " (single fraction "
                  << il::format_fixed(cal.measured, 4) << ")\n";
      }
      const auto events = il::generate(cfg);
      write_events(y_out, events, y_binary);
      std::cout << events.size() << " events\n";
    };
  });

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline");
  std::string u_config, u_out;
  run->add_option("--config", u_config)->required();
  run->add_option("--out", u_out, "Override output_dir");
  run->callback([&] {
    action = [&] {
      auto cfg = il::validate_config(u_config);
      if (seed) cfg.seed = *seed;
      if (!u_out.empty()) {
        cfg.output_dir = fs::absolute(u_out).string();
      }
      const auto rb = il::run_pipeline(cfg);
      for (const auto& s : rb.stages)
        std::cout << s.name << (s.cached ? " (cached)" : "") << ' ' << il::format_fixed(s.seconds, 3) << "s\n";
      std::cout << rb.files.size() << " files in " << rb.root.string() << '\n';
    };
  });

  // validate
  auto* validate = app.add_subcommand("validate", "Check a pipeline config and print it with defaults");
  std::string v_config;
  validate->add_option("--config", v_config)->required();
  int validate_status = 0;
  validate->callback([&] {
    action = [&] {
      const auto r = il::check_config_file(v_config);
      if (!r.ok()) {
        for (const auto& e : r.errors) std::cerr << e << '\n';
        validate_status = 2;
        return;
      }
      auto c = r.config;
      if (seed) c.seed = *seed;
      std::cout << il::serialize_config(c);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    action();
  } catch (const std::exception& e) {
    std::cerr << "impactlab: " << e.what() << '\n';
    return exit_code_for(std::current_exception());
  }
  return fit_status ? fit_status : validate_status;
}
