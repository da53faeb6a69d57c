#pragma once

// Command-line front end. `dispatch` parses argv, runs one subcommand and
// maps failures to exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdmorder/error.hpp"
#include "pdmorder/eval.hpp"
#include "pdmorder/numfmt.hpp"
#include "pdmorder/order_select.hpp"
#include "pdmorder/pdm.hpp"
#include "pdmorder/shapes.hpp"
#include "pdmorder/simgen.hpp"

#ifndef PDMORDER_VERSION
#define PDMORDER_VERSION "0.0.0"
#endif

namespace pdmorder::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// FNV-1a, 64 bit, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  std::string config;  // canonical key = value listing of every flag
  std::optional<std::uint64_t> rng_seed;
  std::string started;

  std::string config_hash() const { return fnv1a_hex(command + "\n" + config); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = config_hash();
    j["rng_seed"] = rng_seed ? nlohmann::json(*rng_seed) : nlohmann::json(nullptr);
    j["tool_version"] = PDMORDER_VERSION;
    j["timestamps"] = {{"started", started}, {"finished", utc_timestamp()}};
    return j;
  }
};

namespace detail {

inline ShapeFileFormat parse_format(const std::string& f) {
  return f == "dir" ? ShapeFileFormat::directory_of_files : ShapeFileFormat::csv_rows;
}

/// Writes to `path`, or to `out` when path is "-".
inline void emit(const std::string& path, std::ostream& out, const std::function<void(std::ostream&)>& writer) {
  if (path == "-") {
    writer(out);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::parse_error, "cannot write " + path);
  writer(f);
}

inline void emit_manifest(const std::string& artifact, const RunManifest& manifest) {
  if (artifact == "-") return;
  std::ofstream f(artifact + ".manifest.json", std::ios::binary);
  f << manifest.to_json().dump(2) << '\n';
}

inline std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto v = parse_double(item);
    if (!v || *v < 1 || *v != static_cast<double>(static_cast<std::size_t>(*v))) {
      throw CLI::ValidationError("--samples", "expected comma-separated positive integers, got '" + text + "'");
    }
    out.push_back(static_cast<std::size_t>(*v));
  }
  if (out.empty()) throw CLI::ValidationError("--samples", "empty list");
  return out;
}

/// "geometric:<ratio>[:<leading>]" or "list:v1,v2,...".
inline Spectrum parse_spectrum(const std::string& text) {
  auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (kind == "geometric") {
    GeometricSpectrum g;
    if (!rest.empty()) {
      auto second = rest.find(':');
      auto ratio = parse_double(rest.substr(0, second));
      if (!ratio) throw CLI::ValidationError("--spectrum", "bad ratio in '" + text + "'");
      g.ratio = *ratio;
      if (second != std::string::npos) {
        auto lead = parse_double(rest.substr(second + 1));
        if (!lead) throw CLI::ValidationError("--spectrum", "bad leading eigenvalue in '" + text + "'");
        g.leading = *lead;
      }
    }
    return g;
  }
  if (kind == "list") {
    ListSpectrum l;
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto v = parse_double(item);
      if (!v) throw CLI::ValidationError("--spectrum", "bad value in '" + text + "'");
      l.values.push_back(*v);
    }
    return l;
  }
  throw CLI::ValidationError("--spectrum", "expected geometric:<ratio> or list:<v1,v2,...>");
}

inline std::vector<SelectorSpec> parse_methods(const std::string& text, double fraction, const SelectOptions& opts) {
  std::vector<SelectorSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "proposed") {
      out.push_back({SelectionMethod::proposed_aic, fraction, opts});
    } else if (item == "variance") {
      out.push_back({SelectionMethod::variance_threshold, fraction, opts});
    } else {
      throw CLI::ValidationError("--methods", "unknown method '" + item + "'");
    }
  }
  return out;
}

inline std::string sidecar(const std::string& out, const std::string& suffix, const std::string& given) {
  if (!given.empty()) return given;
  if (out == "-") return "";
  auto p = std::filesystem::path(out);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

}  // namespace detail

/// Options shared by subcommands that read a shape file.
struct InputFlags {
  std::string input;
  std::string format = "csv";
  bool no_align = false;

  void add(CLI::App* sub, bool with_no_align = true) {
    sub->add_option("--input", input, "Landmark CSV file or directory")->required();
    sub->add_option("--format", format, "csv (one shape per row) or dir (one file per shape)")
        ->check(CLI::IsMember({"csv", "dir"}))
        ->capture_default_str();
    if (with_no_align) sub->add_flag("--no-align", no_align, "Treat the input as already aligned");
  }

  /// Loads and, unless disabled, aligns; reports alignment on `err`.
  ShapeSet load(std::ostream& err, const GpaOptions& gpa = {}) const {
    ShapeSet raw = load_shape_set(input, detail::parse_format(format));
    if (no_align) {
      std::vector<Shape> shapes(raw.begin(), raw.end());
      return ShapeSet::mark_aligned(std::move(shapes));
    }
    err << "aligning " << raw.size() << " shapes (generalized Procrustes)\n";
    return generalized_procrustes(raw, gpa);
  }
};

struct SelectFlags {
  std::string method = "proposed";
  double fraction = 0.95;
  std::string split = "first-half";
  std::uint64_t seed = 0;
  std::size_t t_max = 0;
  double tol = 1e-8;
  std::size_t max_iter = 100;
  std::string mean = "x1";
  std::string clamp = "coordinate";

  void add(CLI::App* sub, bool with_method) {
    if (with_method) {
      sub->add_option("--method", method, "proposed or variance")
          ->check(CLI::IsMember({"proposed", "variance"}))
          ->capture_default_str();
    }
    sub->add_option("--fraction", fraction, "Variance fraction for the threshold rule")
        ->check(CLI::Range(0.0, 1.0))
        ->default_str(format_double(fraction));
    sub->add_option("--split", split, "first-half or shuffled")
        ->check(CLI::IsMember({"first-half", "shuffled"}))
        ->capture_default_str();
    sub->add_option("--seed", seed, "Seed for the shuffled split / subsampling")->capture_default_str();
    sub->add_option("--t-max", t_max, "Largest order searched (0 = automatic)")->capture_default_str();
    sub->add_option("--tol", tol, "Relative objective change for convergence")->default_str(format_double(tol));
    sub->add_option("--max-iter", max_iter, "Alternating-optimization iteration cap")->capture_default_str();
    sub->add_option("--mean", mean, "Mean removed from the regression half: x1 or x2")
        ->check(CLI::IsMember({"x1", "x2"}))
        ->capture_default_str();
    sub->add_option("--clamp", clamp, "Coefficient box handling: coordinate or uniform")
        ->check(CLI::IsMember({"coordinate", "uniform"}))
        ->capture_default_str();
  }

  SelectOptions options(std::size_t threads) const {
    SelectOptions o;
    if (t_max > 0) o.t_max = t_max;
    o.split = {split == "shuffled" ? SplitKind::shuffled : SplitKind::first_half, seed};
    o.mean_source = mean == "x2" ? MeanSource::x2 : MeanSource::x1;
    o.fit.tol = tol;
    o.fit.max_iter = max_iter;
    o.fit.clamp = clamp == "uniform" ? ClampMode::uniform_scale : ClampMode::per_coordinate;
    o.threads = threads;
    return o;
  }
};

struct SimFlags {
  std::size_t landmarks = 40;
  std::size_t order = 10;
  std::string spectrum = "geometric:0.7";
  double beta_db = 20.0;
  std::uint64_t model_seed = 1;
  bool no_realign = false;
  std::string b_dist = "uniform";
  double rotation = std::numbers::pi;
  double log_scale = 0.2;
  double translation = 0.5;

  void add(CLI::App* sub) {
    sub->add_option("--landmarks", landmarks, "Landmarks per shape")->capture_default_str();
    sub->add_option("--order", order, "True model order")->capture_default_str();
    sub->add_option("--spectrum", spectrum, "geometric:<ratio>[:<lambda1>] or list:<v1,...>")->capture_default_str();
    sub->add_option("--beta-db", beta_db, "SNR: smallest signal eigenvalue over noise variance, dB")->default_str(format_double(beta_db));
    sub->add_option("--model-seed", model_seed, "Seed for the procedural seed model")->capture_default_str();
    sub->add_flag("--no-realign", no_realign, "Skip the Procrustes re-alignment after transforming");
    sub->add_option("--b-dist", b_dist, "Coefficient distribution: uniform or gaussian-truncated")
        ->check(CLI::IsMember({"uniform", "gaussian-truncated"}))
        ->capture_default_str();
    sub->add_option("--rotation", rotation, "Rotation range, +- radians")->default_str(format_double(rotation));
    sub->add_option("--log-scale", log_scale, "Log-scale range, +-")->default_str(format_double(log_scale));
    sub->add_option("--translation", translation, "Translation range, +- centroid sizes")->default_str(format_double(translation));
  }

  SeedPdm seed_pdm() const {
    return make_seed_pdm_procedural(landmarks, order, detail::parse_spectrum(spectrum), model_seed);
  }

  SimConfig config(std::size_t samples, std::uint64_t seed) const {
    SimConfig c;
    c.samples = samples;
    c.beta_db = beta_db;
    c.rng_seed = seed;
    c.realign = !no_realign;
    c.b_dist = b_dist == "uniform" ? CoefficientDistribution::uniform_box : CoefficientDistribution::gaussian_truncated;
    c.transforms = {rotation, log_scale, translation};
    return c;
  }
};

inline void write_scores_csv(std::ostream& os, const OrderSelectionResult& r) {
  os << "t,score,iterations,converged\n";
  for (const auto& [t, score] : r.scores) {
    const auto& d = r.diagnostics.at(t);
    os << t << ',' << format_double(score) << ',' << d.iterations << ',' << (d.converged ? 1 : 0) << '\n';
  }
}

/// Runs the command line `args` (args[0] is the program name).
inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Point distribution model fitting and model-order selection", "pdm-order"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PDMORDER_VERSION);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: PDM_ORDER_THREADS or 1)");

  std::function<void()> action;
  RunManifest manifest;

  // align
  auto* align = app.add_subcommand("align", "Generalized Procrustes alignment");
  InputFlags align_in;
  align_in.add(align, false);
  GpaOptions gpa;
  bool rigid = false;
  std::string align_out = "-";
  std::string align_report;
  align->add_option("--tol", gpa.tol, "Mean-change tolerance")->default_str(format_double(gpa.tol));
  align->add_option("--max-iter", gpa.max_iter, "Iteration cap")->capture_default_str();
  align->add_flag("--rigid", rigid, "Rotation and translation only");
  align->add_option("--out", align_out, "Aligned shapes CSV ('-' for stdout)")->capture_default_str();
  align->add_option("--report", align_report, "Write the alignment report (key=value) here ('-' for stderr)");
  align->callback([&] {
    action = [&] {
      if (rigid) gpa.mode = AlignMode::rigid;
      const ShapeSet raw = load_shape_set(align_in.input, detail::parse_format(align_in.format));
      const ShapeSet aligned = generalized_procrustes(raw, gpa);
      detail::emit(align_out, out, [&](std::ostream& os) { write_shape_csv(os, aligned); });
      if (align_report == "-") {
        write_alignment_report(err, *aligned.alignment_report());
      } else if (!align_report.empty()) {
        detail::emit(align_report, out, [&](std::ostream& os) { write_alignment_report(os, *aligned.alignment_report()); });
      }
      detail::emit_manifest(align_out, manifest);
    };
  });

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a point distribution model");
  InputFlags fit_in;
  fit_in.add(fit);
  std::string fit_out = "-";
  std::size_t fit_order = 0;
  fit->add_option("--out", fit_out, "Model container ('-' for stdout)")->capture_default_str();
  fit->add_option("--order", fit_order, "Keep only the first t modes (0 = all)")->capture_default_str();
  fit->callback([&] {
    action = [&] {
      PdmModel model = fit_pdm(fit_in.load(err));
      if (fit_order > 0) {
        const TruncatedPdm kept = truncate(model, fit_order);
        model.eigvecs = kept.basis;
        model.eigvals = kept.lambdas;
      }
      detail::emit(fit_out, out, [&](std::ostream& os) { write_pdm(os, model); });
      detail::emit_manifest(fit_out, manifest);
    };
  });

  // select
  auto* select = app.add_subcommand("select", "Select the model order");
  InputFlags sel_in;
  sel_in.add(select);
  SelectFlags sel;
  sel.add(select, true);
  std::string sel_out;
  select->add_option("--out", sel_out, "Per-order scores CSV (t,score,iterations,converged)");
  select->callback([&] {
    action = [&] {
      manifest.rng_seed = sel.seed;
      const ShapeSet set = sel_in.load(err);
      if (sel.method == "variance") {
        const PdmModel model = fit_pdm(set);
        const auto t = select_order_variance(model, sel.fraction);
        out << "t_star=" << t << '\n';
        if (!sel_out.empty()) {
          detail::emit(sel_out, out, [&](std::ostream& os) {
            os << "t,score,iterations,converged\n";
            double cum = 0.0;
            const double total = model.eigvals.sum();
            for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(model.positive_rank()); ++i) {
              cum += model.eigvals(i);
              os << i + 1 << ',' << format_double(cum / total) << ",0,1\n";
            }
          });
          detail::emit_manifest(sel_out, manifest);
        }
        return;
      }
      const auto result = select_order_proposed(set, sel.options(threads));
      for (const auto& [t, msg] : result.failed_orders) err << "order " << t << " excluded: " << msg << '\n';
      for (const auto& [t, d] : result.diagnostics) {
        if (d.underdetermined) {
          err << "note: order " << t << " has M2 <= t (underdetermined, clamped fit)\n";
          break;
        }
      }
      out << "t_star=" << result.t_star << '\n';
      if (!sel_out.empty()) {
        detail::emit(sel_out, out, [&](std::ostream& os) { write_scores_csv(os, result); });
        detail::emit_manifest(sel_out, manifest);
      }
    };
  });

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate synthetic shapes with a known order");
  SimFlags sim;
  sim.add(simulate);
  std::size_t sim_samples = 100;
  std::uint64_t sim_seed = 1;
  std::string sim_out = "-";
  std::string sim_truth;
  simulate->add_option("--samples", sim_samples, "Number of shapes")->capture_default_str();
  simulate->add_option("--seed", sim_seed, "Sampling seed")->capture_default_str();
  simulate->add_option("--out", sim_out, "Shapes CSV ('-' for stdout)")->capture_default_str();
  simulate->add_option("--out-truth", sim_truth, "Ground-truth JSON (order, noise variance, spectrum)");
  simulate->callback([&] {
    action = [&] {
      manifest.rng_seed = sim_seed;
      const SeedPdm seed = sim.seed_pdm();
      const SimConfig cfg = sim.config(sim_samples, sim_seed);
      const ShapeSet set = sample_shapes(seed, cfg);
      detail::emit(sim_out, out, [&](std::ostream& os) { write_shape_csv(os, set); });
      if (!sim_truth.empty()) {
        nlohmann::json j;
        j["order"] = seed.underlying.order;
        j["noise_variance"] = noise_variance(seed, cfg.beta_db, cfg.b_dist);
        j["beta_db"] = cfg.beta_db;
        j["spectrum"] = std::vector<double>(seed.underlying.lambdas.begin(), seed.underlying.lambdas.end());
        j["landmarks"] = sim.landmarks;
        j["seed_model"] = seed.source;
        j["model_seed"] = sim.model_seed;
        j["seed"] = sim_seed;
        detail::emit(sim_truth, out, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
      }
      detail::emit_manifest(sim_out, manifest);
    };
  });

  // montecarlo
  auto* mc = app.add_subcommand("montecarlo", "Monte Carlo order-recovery study on synthetic data");
  SimFlags mc_sim;
  mc_sim.add(mc);
  SelectFlags mc_sel;
  mc_sel.add(mc, false);
  std::string mc_samples = "10,20,40,100,200";
  std::size_t mc_trials = 100;
  std::uint64_t mc_seed = 1;
  std::string mc_methods = "proposed,variance";
  std::string mc_out = "-";
  std::string mc_hist;
  mc->add_option("--samples", mc_samples, "Comma-separated sample counts")->capture_default_str();
  mc->add_option("--trials", mc_trials, "Trials per sample count")->capture_default_str();
  mc->add_option("--mc-seed", mc_seed, "Master seed")->capture_default_str();
  mc->add_option("--methods", mc_methods, "Comma-separated: proposed, variance")->capture_default_str();
  mc->add_option("--out", mc_out, "Summary CSV (method,M,mean_t,var_t)")->capture_default_str();
  mc->add_option("--hist", mc_hist, "Histogram CSV (default: <out>_hist.csv)");
  mc->callback([&] {
    action = [&] {
      manifest.rng_seed = mc_seed;
      McConfig cfg;
      cfg.seed_pdm = mc_sim.seed_pdm();
      cfg.true_t = mc_sim.order;
      cfg.beta_db = mc_sim.beta_db;
      cfg.sample_counts = detail::parse_counts(mc_samples);
      cfg.trials = mc_trials;
      cfg.rng_seed = mc_seed;
      cfg.methods = detail::parse_methods(mc_methods, mc_sel.fraction, mc_sel.options(1));
      cfg.sim = mc_sim.config(4, 0);
      cfg.threads = threads;
      const TrialSummary summary = monte_carlo_order(cfg);
      for (const auto& c : summary.cells) {
        for (const auto& msg : c.failure_messages) err << c.method << " M=" << c.samples << " " << msg << '\n';
      }
      detail::emit(mc_out, out, [&](std::ostream& os) { write_summary_csv(os, summary); });
      if (auto h = detail::sidecar(mc_out, "_hist.csv", mc_hist); !h.empty()) {
        detail::emit(h, out, [&](std::ostream& os) { write_histogram_csv(os, summary); });
      }
      detail::emit_manifest(mc_out, manifest);
    };
  });

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Selected order versus number of samples on ingested data");
  InputFlags sw_in;
  sw_in.add(sweep);
  SelectFlags sw_sel;
  sw_sel.add(sweep, false);
  std::string sw_samples;
  std::size_t sw_trials = 20;
  std::uint64_t sw_seed = 1;
  bool sw_prefix = false;
  std::string sw_methods = "proposed,variance";
  std::string sw_out = "-";
  std::string sw_hist;
  sweep->add_option("--samples", sw_samples, "Comma-separated sample counts")->required();
  sweep->add_option("--trials", sw_trials, "Random subsets per sample count")->capture_default_str();
  sweep->add_option("--sweep-seed", sw_seed, "Master seed for subsets")->capture_default_str();
  sweep->add_flag("--prefix", sw_prefix, "Use the first M shapes instead of random subsets");
  sweep->add_option("--methods", sw_methods, "Comma-separated: proposed, variance")->capture_default_str();
  sweep->add_option("--out", sw_out, "Summary CSV (method,M,mean_t,var_t)")->capture_default_str();
  sweep->add_option("--hist", sw_hist, "Histogram CSV (default: <out>_hist.csv)");
  sweep->callback([&] {
    action = [&] {
      manifest.rng_seed = sw_seed;
      const ShapeSet set = sw_in.load(err);
      SweepOptions opts;
      opts.mode = sw_prefix ? SubsetMode::prefix : SubsetMode::random;
      opts.methods = detail::parse_methods(sw_methods, sw_sel.fraction, sw_sel.options(1));
      opts.threads = threads;
      const TrialSummary summary = order_sweep(set, detail::parse_counts(sw_samples), sw_trials, sw_seed, opts);
      for (const auto& c : summary.cells) {
        for (const auto& msg : c.failure_messages) err << c.method << " M=" << c.samples << " " << msg << '\n';
      }
      detail::emit(sw_out, out, [&](std::ostream& os) { write_summary_csv(os, summary); });
      if (auto h = detail::sidecar(sw_out, "_hist.csv", sw_hist); !h.empty()) {
        detail::emit(h, out, [&](std::ostream& os) { write_histogram_csv(os, summary); });
      }
      detail::emit_manifest(sw_out, manifest);
    };
  });

  // lmmse
  auto* lmmse = app.add_subcommand("lmmse", "Leave-one-out LMMSE landmark-occlusion error per order");
  InputFlags lm_in;
  lm_in.add(lmmse);
  SelectFlags lm_sel;
  lm_sel.add(lmmse, false);
  bool lm_pinv = false;
  std::string lm_out = "-";
  std::string lm_json;
  lmmse->add_flag("--pseudo-inverse", lm_pinv, "Use a pseudo-inverse instead of the ridge");
  lmmse->add_option("--out", lm_out, "CSV t,e_lmmse")->capture_default_str();
  lmmse->add_option("--json", lm_json, "Selected orders JSON (default: <out>.json)");
  lmmse->callback([&] {
    action = [&] {
      const ShapeSet set = lm_in.load(err);
      LmmseOptions opts;
      opts.solver = lm_pinv ? LmmseSolver::pseudo_inverse : LmmseSolver::ridge;
      opts.selectors = detail::parse_methods("proposed,variance", lm_sel.fraction, lm_sel.options(1));
      opts.threads = threads;
      const LmmseResult result = lmmse_curve(set, opts);
      detail::emit(lm_out, out, [&](std::ostream& os) { write_lmmse_csv(os, result); });
      if (auto js = detail::sidecar(lm_out, ".json", lm_json); !js.empty()) {
        nlohmann::json j;
        j["argmin_t"] = result.argmin_t;
        j["selected_orders"] = result.selected_orders;
        detail::emit(js, out, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
      }
      detail::emit_manifest(lm_out, manifest);
    };
  });

  // mean-shape
  auto* mean = app.add_subcommand("mean-shape", "Average aligned shape as landmark,x,y CSV");
  InputFlags mean_in;
  mean_in.add(mean);
  std::string mean_out = "-";
  mean->add_option("--out", mean_out, "CSV landmark,x,y ('-' for stdout)")->capture_default_str();
  mean->callback([&] {
    action = [&] {
      const Shape m = mean_shape(mean_in.load(err));
      detail::emit(mean_out, out, [&](std::ostream& os) {
        os << "landmark,x,y\n";
        for (Eigen::Index i = 0; i < m.landmarks(); ++i) {
          os << i + 1 << ',' << format_double(m.x(i)) << ',' << format_double(m.y(i)) << '\n';
        }
      });
      detail::emit_manifest(mean_out, manifest);
    };
  });

  for (auto* sub : app.get_subcommands({})) sub->configurable();
  app.footer("Re-run a recorded run with: pdm-order --replay <artifact>.manifest.json");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    if (rev.size() == 2 && rev.back() == "--replay") {
      std::ifstream f(rev.front());
      if (!f) {
        err << "error: cannot read manifest " << rev.front() << '\n';
        return kExitData;
      }
      nlohmann::json j;
      try {
        f >> j;
      } catch (const nlohmann::json::exception& e) {
        err << "error: malformed manifest " << rev.front() << ": " << e.what() << '\n';
        return kExitData;
      }
      std::istringstream cfg("[" + j.value("command", std::string{}) + "]\n" + j.value("config", std::string{}));
      app.parse_from_stream(cfg);
    } else {
      app.parse(rev);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    const auto chosen = app.get_subcommands();
    err << (chosen.empty() ? app.help() : chosen.front()->help());
    return kExitUsage;
  }

  manifest.started = utc_timestamp();
  for (auto* sub : app.get_subcommands()) {
    manifest.command = sub->get_name();
    manifest.config = sub->config_to_str(true, false);
  }
  try {
    if (action) action();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.is_numerical() ? kExitNumerical : kExitData;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace pdmorder::cli
