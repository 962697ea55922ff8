// Command-line front end: waveforms, scenarios, experiments, calibration and the service.

#include "jamemu/experiments.hpp"
#include "jamemu/server.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <csignal>
#include <cstdlib>
#include <iostream>

namespace {

using namespace jamemu;

std::atomic<bool> g_interrupted{false};

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return Json::parse(in);
}

int report(const ExperimentResult& r, const fs::path& out) {
  std::cout << to_json(r.verdict).dump(2) << '\n';
  std::cerr << fmt::format("{}: {} (artifacts in {})\n", r.verdict.experiment, r.verdict.pass() ? "PASS" : "FAIL",
                           out.string());
  return r.verdict.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Software wireless jamming emulator"};
  app.require_subcommand(1);

  // waveform
  auto* wf = app.add_subcommand("waveform", "Generate a baseband waveform as an IQ file");
  std::string wf_kind = "AWGN";
  WaveformSpec spec;
  std::uint64_t wf_seed = 1;
  std::string wf_out;
  std::string wf_psd;
  wf->add_option("--kind", wf_kind, "FSK, ASK, MSK, AWGN, BandNoise, CPFSK or CustomFile");
  wf->add_option("--bandwidth", spec.bandwidth_hz, "Occupied bandwidth in Hz");
  wf->add_option("--symbol-rate", spec.symbol_rate_hz, "Symbol rate in Hz");
  wf->add_option("--gain", spec.gain_db, "Gain in dB (mean power 10^(gain/10))");
  wf->add_option("--sample-rate", spec.sample_rate_hz, "Sample rate in Hz");
  wf->add_option("--duration", spec.duration_s, "Duration in seconds");
  wf->add_option("--custom", spec.custom_path, "Source IQ file for CustomFile");
  wf->add_option("--seed", wf_seed);
  wf->add_option("--out", wf_out, "Output .iq path (sidecar written alongside)")->required();
  wf->add_option("--psd", wf_psd, "Also write the PSD as CSV (freq_hz,power_db)");

  // scenario
  auto* scn = app.add_subcommand("scenario", "Validate or build scenario documents");
  scn->require_subcommand(1);
  auto* scn_validate = scn->add_subcommand("validate", "Validate a scenario file");
  std::string scn_path;
  scn_validate->add_option("path", scn_path)->required();
  auto* scn_build = scn->add_subcommand("build", "Build a clustered scenario");
  ClusterLayout layout;
  std::uint64_t scn_seed = 1;
  std::string scn_out;
  scn_build->add_option("--bs", layout.n_bs);
  scn_build->add_option("--users", layout.users_per_cluster, "Users per cluster");
  scn_build->add_option("--radius", layout.cluster_radius_m);
  scn_build->add_option("--spacing", layout.inter_bs_spacing_m);
  scn_build->add_option("--seed", scn_seed);
  scn_build->add_option("--out", scn_out)->required();

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run a scripted experiment and print its verdict");
  std::string exp_name;
  std::string exp_out;
  std::optional<std::uint64_t> exp_seed;
  std::string exp_cal;
  exp->add_option("name", exp_name, "fig5, gain-sweep, cluster or chase")
      ->required()
      ->check(CLI::IsMember({"fig5", "gain-sweep", "cluster", "chase"}));
  exp->add_option("--out", exp_out)->required();
  exp->add_option("--seed", exp_seed);
  exp->add_option("--calibration", exp_cal, "Calibration file (default: committed data/calibration.json)");

  // compare
  auto* cmp = app.add_subcommand("compare", "Compare two percent traces (time_s,value CSV)");
  std::string cmp_a, cmp_b;
  cmp->add_option("a", cmp_a)->required();
  cmp->add_option("b", cmp_b)->required();

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Search calibration parameters and write the golden trace");
  std::string cal_out = (default_data_dir() / "calibration.json").string();
  std::string cal_golden = golden_fig5_path().string();
  cal->add_option("--out", cal_out);
  cal->add_option("--golden", cal_golden);

  // run
  auto* runc = app.add_subcommand("run", "Execute a run configuration offline");
  std::string run_cfg, run_out;
  runc->add_option("config", run_cfg)->required();
  runc->add_option("--out", run_out)->required();

  // serve
  auto* srv = app.add_subcommand("serve", "Start the control-plane service");
  int port = 8080;
  std::string data_dir = "runs";
  std::string console_dir;
  std::size_t capacity = 4;
  srv->add_option("--port", port)->envname("JAMEMU_PORT");
  srv->add_option("--data-dir", data_dir)->envname("JAMEMU_DATA_DIR");
  srv->add_option("--console-dir", console_dir, "Static console assets served under /console");
  srv->add_option("--capacity", capacity, "Maximum concurrent runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*wf) {
      const auto kind = parse_waveform_kind(wf_kind);
      if (!kind) throw ValidationError("kind", "unknown waveform kind " + wf_kind);
      spec.kind = *kind;
      const IqBuffer buf = gen_waveform(spec, wf_seed);
      write_iq_file(wf_out, buf);
      if (!wf_psd.empty()) {
        const auto frame = psd(buf);
        std::ofstream out(wf_psd);
        out << "freq_hz,power_db\n";
        for (std::size_t i = 0; i < frame.size(); ++i)
          out << fmt::format("{},{}\n", frame.bin_center_hz(i), frame.power_db[i]);
      }
      std::cerr << fmt::format("wrote {} samples, mean power {:.6g}\n", buf.size(), buf.mean_power());
      return 0;
    }
    if (*scn_validate) {
      const auto sc = load_scenario(scn_path);
      std::cout << fmt::format("ok: {} nodes, {} attachments{}\n", sc.nodes.size(), sc.attachments.size(),
                               sc.jammer ? ", jammer configured" : "");
      return 0;
    }
    if (*scn_build) {
      save_scenario(scn_out, build_clustered_scenario(layout, scn_seed));
      return 0;
    }
    if (*exp) {
      const Calibration c = exp_cal.empty() ? default_calibration() : load_calibration(exp_cal);
      ExperimentOptions opt;
      opt.seed = exp_seed;
      const fs::path out = exp_out;
      if (exp_name == "fig5") {
        auto r = run_fig5(c, out, opt);
        if (fs::exists(golden_fig5_path())) {
          const auto golden = read_trace_csv(golden_fig5_path());
          const auto t = compare_traces(trace_values(r.trace), trace_values(golden));
          std::ofstream(out / "trace_comparison.json")
              << Json{{"min", t.min}, {"mean", t.mean}, {"max", t.max}, {"length", t.length}}.dump(2) << '\n';
        }
        return report(r, out);
      }
      if (exp_name == "gain-sweep") return report(run_gain_sweep(c, out, opt), out);
      if (exp_name == "cluster") return report(run_cluster_impact(c, out, opt), out);
      return report(run_fig3_chase(c, out, opt), out);
    }
    if (*cmp) {
      const auto a = read_trace_csv(cmp_a);
      const auto b = read_trace_csv(cmp_b);
      const auto t = compare_traces(trace_values(a), trace_values(b));
      std::cout << Json{{"min", t.min}, {"mean", t.mean}, {"max", t.max}, {"length", t.length}}.dump(2) << '\n';
      return 0;
    }
    if (*cal) {
      const auto rep = calibrate();
      save_calibration(cal_out, rep.calibration);
      fs::create_directories(fs::path(cal_golden).parent_path());
      write_trace_csv(cal_golden, rep.golden_trace);
      std::cerr << fmt::format(
          "calibration written to {}; golden seed {} (plateau {:.2f}% vs {:.2f}%, accuracy min {:.2f} mean {:.2f})\n",
          cal_out, rep.calibration.fig5.golden_seed, rep.golden_plateau, rep.default_plateau,
          rep.golden_comparison.min, rep.golden_comparison.mean);
      return 0;
    }
    if (*runc) {
      const RunConfig cfg = run_config_from_json(read_json_file(run_cfg));
      const RunRecord rec = run(cfg);
      write_record(run_out, rec, cfg);
      std::cerr << fmt::format("{} ticks, {} links, config {}\n", rec.ticks, rec.links.size(), rec.config_hash);
      return 0;
    }
    if (*srv) {
      RunManager manager(data_dir, capacity);
      Server::Options opts;
      opts.address = "0.0.0.0";
      opts.port = static_cast<unsigned short>(port);
      if (!console_dir.empty()) opts.console_dir = console_dir;
      Server server(manager, opts);
      const auto bound = server.start();
      std::cerr << fmt::format("listening on port {} (data dir {})\n", bound, data_dir);
      std::signal(SIGINT, [](int) { g_interrupted = true; });
      std::signal(SIGTERM, [](int) { g_interrupted = true; });
      while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
      server.stop();
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error (" << e.field() << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
