// cosetpsd: pattern design, periodogram reconstruction and Monte Carlo
// experiment runner.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cosetpsd/cosetpsd.hpp"

namespace {

using namespace cosetpsd;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct ExperimentFlags {
  std::string manifest;
  std::string scenario;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> threads;
  std::vector<int> tau;
  std::vector<double> rate;
  std::vector<double> sigma2_dbm;
  std::vector<int> extra_cosets;
  std::string patterns;
  std::vector<std::string> sync_modes;
  std::optional<int> bench_reps;
  std::optional<int> avg_width;
  std::string active_bands;
  std::string quiet_band;
  std::optional<int> active_points;
  std::optional<int> quiet_points;
};

void add_experiment_flags(CLI::App* sub, ExperimentFlags& f, bool sweep, bool detector) {
  sub->add_option("--manifest", f.manifest, "Manifest file; flags below override its keys")->check(CLI::ExistingFile);
  sub->add_option("--scenario", f.scenario, "Scenario file")->check(CLI::ExistingFile);
  sub->add_option("--output", f.output, "Output directory");
  sub->add_option("--seed", f.seed, "Base seed of all random streams")->required();
  sub->add_option("--runs", f.runs, "Monte Carlo runs");
  sub->add_option("--threads", f.threads, "Worker threads");
  if (sweep) {
    sub->add_option("--tau", f.tau, "Sensors per cluster (list)")->delimiter(',');
    sub->add_option("--rate", f.rate, "Compression rates M/N (list)")->delimiter(',');
    sub->add_option("--sigma2-dbm", f.sigma2_dbm, "Noise levels in dBm (list)")->delimiter(',');
    sub->add_option("--extra-cosets", f.extra_cosets, "Order of cosets added for higher rates")->delimiter(',');
    sub->add_option("--patterns", f.patterns, "Explicit patterns, 'a,b,c; d,e,f'");
    sub->add_option("--sync-mode", f.sync_modes, "synchronized and/or unsynchronized")->delimiter(',');
    sub->add_option("--bench-reps", f.bench_reps, "Timing repetitions (bench)");
  }
  if (detector) {
    sub->add_option("--avg-width", f.avg_width, "Grid points per averaged block");
    sub->add_option("--active-bands", f.active_bands, "Active bands 'lo,hi; lo,hi'");
    sub->add_option("--quiet-band", f.quiet_band, "Quiet band 'lo,hi'");
    sub->add_option("--active-points", f.active_points, "Grid points per active band");
    sub->add_option("--quiet-points", f.quiet_points, "Grid points in the quiet band");
  }
}

ExperimentManifest build_manifest(const std::string& kind, const ExperimentFlags& f) {
  ExperimentManifest m;
  if (!f.manifest.empty()) {
    m = load_manifest(f.manifest);
    if (m.kind != kind) throw ConfigError("manifest kind '" + m.kind + "' does not match subcommand '" + kind + "'");
  }
  m.kind = kind;
  if (!f.scenario.empty()) m.scenario = f.scenario;
  if (!f.output.empty()) m.output = f.output;
  if (f.seed) m.seed = f.seed;
  if (f.runs) m.runs = *f.runs;
  if (f.threads) m.threads = *f.threads;
  if (!f.tau.empty()) m.tau = f.tau;
  if (!f.rate.empty()) m.rate = f.rate;
  if (!f.sigma2_dbm.empty()) m.sigma2_dbm = f.sigma2_dbm;
  if (!f.extra_cosets.empty()) m.extra_cosets = f.extra_cosets;
  if (!f.patterns.empty()) m.patterns = f.patterns;
  if (!f.sync_modes.empty()) {
    m.sync_modes.clear();
    for (const auto& s : f.sync_modes) m.sync_modes.push_back(detail::parse_sync_mode(s));
  }
  if (f.bench_reps) m.bench_reps = *f.bench_reps;
  const bool any_detector = f.avg_width || !f.active_bands.empty() || !f.quiet_band.empty() || f.active_points ||
                            f.quiet_points;
  if (any_detector) {
    DetectorConfig d = m.detector.value_or(DetectorConfig{});
    if (f.avg_width) d.avg_width = *f.avg_width;
    const int ap = f.active_points.value_or(d.active.empty() ? 11 * d.avg_width : d.active.front().points);
    const int qp = f.quiet_points.value_or(d.quiet.points > 0 ? d.quiet.points : 33 * d.avg_width);
    if (!f.active_bands.empty()) d.active = detail::parse_bands(f.active_bands, ap);
    for (auto& b : d.active) b.points = ap;
    if (!f.quiet_band.empty()) {
      auto q = detail::parse_bands(f.quiet_band, qp);
      if (q.size() != 1) throw ConfigError("--quiet-band needs exactly one band");
      d.quiet = q.front();
    }
    d.quiet.points = qp;
    m.detector = d;
  }
  return m;
}

void print_ruler(const RulerDesign& d, const char* minimal) {
  std::cout << d.pattern.to_string() << "\tcardinality=" << d.pattern.size()
            << "\tverified=" << (is_circular_sparse_ruler(d.pattern) ? "true" : "false") << "\tminimal=" << minimal
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-coset compressive averaged periodogram toolkit"};
  app.require_subcommand(1);

  int period = 0;
  int marks = 0;
  bool exhaustive = false;
  std::string pattern_text;

  auto* ruler_cmd = app.add_subcommand("design-ruler", "Minimal circular sparse ruler for a period");
  ruler_cmd->add_option("--period", period, "Period N")->required()->check(CLI::PositiveNumber);
  ruler_cmd->add_flag("--exhaustive", exhaustive, "Enumerate all subsets (N <= 24)");

  auto* family_cmd = app.add_subcommand("design-family", "Pair-covering pattern family");
  family_cmd->add_option("--period", period, "Period N")->required()->check(CLI::PositiveNumber);
  family_cmd->add_option("--marks", marks, "Cosets per pattern M")->required();

  auto* inspect_cmd = app.add_subcommand("inspect-pattern", "Lag multiplicities and identifiability");
  inspect_cmd->add_option("--period", period, "Period N")->required()->check(CLI::PositiveNumber);
  inspect_cmd->add_option("--pattern", pattern_text, "Marks, comma separated")->required();

  const std::vector<std::pair<std::string, std::string>> kinds{
      {"reconstruct", "Synthesize, reconstruct the CAP and the NAP"},
      {"nmse-sweep", "NMSE of the CAP against the NAP over tau, rate and noise"},
      {"roc", "Detection ROC of the block-averaged CAP"},
      {"variance-check", "White-noise CAP variance against the closed form"},
      {"bench", "Stage timings and scaling checks"}};
  std::vector<ExperimentFlags> flags(kinds.size());
  std::vector<CLI::App*> exp_cmds;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    auto* sub = app.add_subcommand(kinds[k].first, kinds[k].second);
    add_experiment_flags(sub, flags[k], kinds[k].first != "reconstruct", kinds[k].first == "roc");
    exp_cmds.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (ruler_cmd->parsed()) {
      if (exhaustive) {
        RulerDesign d{exhaustive_minimal_ruler(period), true, 0};
        print_ruler(d, "exhaustive");
      } else {
        const auto d = minimal_circular_sparse_ruler(period);
        print_ruler(d, d.proven_minimal ? "proven" : "unproven");
      }
      return 0;
    }
    if (family_cmd->parsed()) {
      const auto fam = design_pair_cover_family(period, marks);
      const bool ok = verify_pair_coverage(fam);
      for (const auto& p : fam.patterns()) {
        std::cout << p.to_string() << "\tcardinality=" << p.size() << '\n';
      }
      std::cout << "groups=" << fam.groups() << "\tverified=" << (ok ? "true" : "false") << '\n';
      return 0;
    }
    if (inspect_cmd->parsed()) {
      const auto p = CosetPattern::parse(period, pattern_text);
      const SystemMatrix sys(p);
      std::cout << "pattern=" << p.to_string() << "\tperiod=" << period << "\tmarks=" << p.size()
                << "\trate=" << format_double(p.rate()) << '\n';
      std::cout << "gamma=" << detail::join(sys.gamma()) << '\n';
      std::cout << "identifiable=" << (sys.identifiable() ? "true" : "false") << '\n';
      const auto missing = sys.missing_lags();
      if (!missing.empty()) std::cout << "missing_lags=" << detail::join(missing) << '\n';
      const auto cf = whitenoise_variance_closed_form(p, 1.0, 1);
      std::cout << "whitenoise_nmse_tau1=" << format_double(cf.value) << '\n';
      return 0;
    }
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      if (exp_cmds[k]->parsed()) {
        const auto m = build_manifest(kinds[k].first, flags[k]);
        run_manifest(m);
        std::cout << "wrote " << m.output.string() << '\n';
        return 0;
      }
    }
  } catch (const IdentifiabilityError& e) {
    std::cerr << "error[identifiability]: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error[config]: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "error[io]: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
