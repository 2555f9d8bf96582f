// Command-line front end: single runs, threshold sweeps, scenario
// diagnostics, and Monte-Carlo covariance estimation.  Output is data only
// (CSV / JSON); plotting is left to external tools.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "etdkf/etdkf.hpp"

namespace {

struct CommonArgs {
    std::string scenario_path;
    std::vector<std::string> overrides;
    std::uint64_t seed{0};
    CLI::Option* seed_opt{nullptr};
    std::string out_dir{"."};
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out) {
    cmd->add_option("--scenario", args.scenario_path, "Scenario JSON file")
        ->required()
        ->type_name("PATH");
    cmd->add_option("--set", args.overrides,
                    "Override a scenario field, KEY=VALUE with dotted keys "
                    "(e.g. trigger.pi_max=2); repeatable")
        ->type_name("KEY=VALUE");
    args.seed_opt =
        cmd->add_option("--seed", args.seed, "Replace the scenario seed")->type_name("N");
    if (with_out)
        cmd->add_option("--out", args.out_dir, "Output directory (created if missing)")
            ->type_name("DIR");
}

etdkf::Scenario load(const CommonArgs& args) {
    etdkf::Scenario sc = etdkf::load_scenario(args.scenario_path, args.overrides);
    if (args.seed_opt != nullptr && args.seed_opt->count() > 0) sc.seed = args.seed;
    return sc;
}

std::string out_path(const CommonArgs& args, const std::string& name) {
    std::filesystem::create_directories(args.out_dir);
    return (std::filesystem::path(args.out_dir) / name).string();
}

std::vector<double> parse_thresholds(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double v = std::stod(item, &used);
            while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])))
                ++used;
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw CLI::ValidationError("--sweep", "'" + item + "' is not a number");
        }
    }
    if (out.empty()) throw CLI::ValidationError("--sweep", "no thresholds given");
    return out;
}

int cmd_run(const CommonArgs& args) {
    const etdkf::Scenario sc = load(args);
    const etdkf::RunLog log = etdkf::simulate(sc);
    const std::string log_path = out_path(args, "runlog.csv");
    const std::string summary_path = out_path(args, "run_summary.json");
    etdkf::write_runlog_csv(log, log_path);
    etdkf::write_run_summary(log, etdkf::kVersion, summary_path);
    const nlohmann::json j = etdkf::run_summary(log, etdkf::kVersion);
    std::cout << "scenario '" << log.scenario_name << "' seed " << log.seed << ": "
              << log.steps.size() << " steps, " << log.triggered_steps() << " triggered, "
              << log.total_msgs() << " messages, leader mean position error "
              << j["leader_mean_position_error_m"].get<double>() << " m\n"
              << "wrote " << log_path << " and " << summary_path << "\n";
    return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& sweep_text, int seeds_per_point) {
    etdkf::SweepSpec spec;
    spec.thresholds = parse_thresholds(sweep_text);
    spec.seeds_per_point = seeds_per_point;
    spec.validate();
    const etdkf::Scenario sc = load(args);
    const std::vector<etdkf::SweepRow> rows = etdkf::run_sweep(sc, spec);
    const std::string path = out_path(args, "sweep.csv");
    etdkf::write_sweep_csv(path, rows);
    std::cout << etdkf::sweep_to_csv(rows) << "wrote " << path << "\n";
    return 0;
}

int cmd_verify(const CommonArgs& args) {
    const etdkf::Scenario sc = load(args);
    const std::vector<etdkf::DiagnosticResult> results = etdkf::run_diagnostics(sc);
    for (const auto& r : results)
        std::printf("[%s] %-22s %s\n", etdkf::status_name(r.status), r.name.c_str(),
                    r.detail.c_str());
    if (!etdkf::all_passed(results)) {
        std::cerr << "verification failed\n";
        return 1;
    }
    return 0;
}

int cmd_mc(const CommonArgs& args, int runs) {
    const etdkf::Scenario sc = load(args);
    const etdkf::GlobalCovariance cov = etdkf::monte_carlo_covariance(sc, runs);
    const std::string path = out_path(args, "sigma_mc.csv");
    std::string csv;
    for (Eigen::Index r = 0; r < cov.Sigma.rows(); ++r) {
        for (Eigen::Index c = 0; c < cov.Sigma.cols(); ++c) {
            if (c > 0) csv.push_back(',');
            etdkf::detail::append_double(csv, cov.Sigma(r, c));
        }
        csv.push_back('\n');
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw etdkf::Error("cannot write '" + path + "'");
    out << csv;
    std::cout << "estimated " << cov.Sigma.rows() << "x" << cov.Sigma.cols()
              << " error covariance from " << runs << " runs: trace " << cov.Sigma.trace()
              << ", Frobenius norm " << cov.Sigma.norm() << "\n"
              << "wrote " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Event-triggered diffusion EKF simulator and analysis tool"};
    app.set_version_flag("--version", std::string(etdkf::kVersion));
    app.require_subcommand(1);

    CommonArgs run_args, sweep_args, verify_args, mc_args;
    std::string sweep_text;
    int seeds_per_point = 5;
    int mc_runs = 1000;

    CLI::App* run = app.add_subcommand("run", "Simulate one scenario; write runlog.csv and "
                                              "run_summary.json");
    add_common(run, run_args, true);

    CLI::App* sweep = app.add_subcommand(
        "sweep", "Sweep the trigger threshold over several seeds; write sweep.csv");
    add_common(sweep, sweep_args, true);
    sweep->add_option("--sweep", sweep_text, "Comma-separated pi_max values, e.g. \"0,1,5,10\"")
        ->required()
        ->type_name("LIST");
    sweep->add_option("--seeds-per-point", seeds_per_point, "Seeds per threshold (default 5)")
        ->check(CLI::PositiveNumber)
        ->type_name("N");

    CLI::App* verify = app.add_subcommand(
        "verify", "Run the scenario's invariant diagnostics; nonzero exit on any failure");
    add_common(verify, verify_args, false);

    CLI::App* mc = app.add_subcommand(
        "mc", "Monte-Carlo estimate of the stacked error covariance; write sigma_mc.csv");
    add_common(mc, mc_args, true);
    mc->add_option("--mc-runs", mc_runs, "Number of Monte-Carlo runs (default 1000, min 100)")
        ->check(CLI::PositiveNumber)
        ->type_name("N");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_args);
        if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_text, seeds_per_point);
        if (verify->parsed()) return cmd_verify(verify_args);
        if (mc->parsed()) return cmd_mc(mc_args, mc_runs);
    } catch (const etdkf::ScenarioError& e) {
        std::cerr << "scenario error: " << e.what() << "\n";
        return 2;
    } catch (const etdkf::NumericalFailureError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
