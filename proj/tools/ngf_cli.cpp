// ngf: command-line front end for the nested Gaussian filter experiments.
//
//   ngf simulate     --out truth.csv            ground truth (+ truth_obs.csv)
//   ngf run          --algorithm ... --out r.csv
//   ngf sweep-lambda --grid 1e-5,1e-3 --out s.csv
//   ngf sweep-noise  --grid 1,2,4,10
//   ngf continuity   --grid 0,1e-4,1e-2
//   ngf compare      --algorithms nested_ukf_ekf,smc_ekf --out c.csv
//
// Options come from --config <file> first; explicit flags override it.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ngf/csv.hpp"
#include "ngf/experiments.hpp"
#include "ngf/lorenz63.hpp"

namespace fs = std::filesystem;
using namespace ngf;

namespace {

struct Flags {
    std::optional<std::string> config;
    std::optional<double> lambda;
    std::optional<std::string> norm;
    std::optional<std::string> algorithm;
    std::optional<std::uint64_t> seed;
    std::optional<double> t_end;
    std::optional<int> n_runs;
    std::optional<std::string> out;
    std::optional<std::string> format;
    std::optional<std::string> grid;
    std::optional<std::string> algorithms;
    std::optional<std::string> observed;
    std::optional<double> sigma_y2;
};

void add_common_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "Key = value configuration file");
    cmd->add_option("--lambda", f.lambda, "Relative recursion threshold");
    cmd->add_option("--norm", f.norm, "Norm of the recursion test: 1, 2 or inf");
    cmd->add_option("--algorithm", f.algorithm,
                    "nested_ukf_ekf, nested_ckf_ekf, augmented_ukf, augmented_enkf or smc_ekf");
    cmd->add_option("--seed", f.seed, "Base seed");
    cmd->add_option("--t-end", f.t_end, "Horizon in continuous time");
    cmd->add_option("--n-runs", f.n_runs, "Independent runs");
    cmd->add_option("--out", f.out, "Output path");
    cmd->add_option("--format", f.format, "csv or svg");
    cmd->add_option("--observed", f.observed, "Observed state indices, e.g. 1,3");
    cmd->add_option("--sigma-y2", f.sigma_y2, "Observation noise variance");
}

ExperimentSettings resolve(const Flags& f) {
    ExperimentSettings s;
    if (f.config) {
        apply_config(load_config_file(*f.config), s);
    }
    ConfigMap overrides;
    auto put = [&](const char* key, const std::optional<std::string>& v) {
        if (v) {
            overrides[key] = *v;
        }
    };
    put("norm", f.norm);
    put("algorithm", f.algorithm);
    put("format", f.format);
    put("observed_indices", f.observed);
    put("algorithms", f.algorithms);
    if (f.lambda) {
        s.run.nested.lambda = *f.lambda;
    }
    if (f.seed) {
        s.run.seed = *f.seed;
    }
    if (f.t_end) {
        s.run.t_end = *f.t_end;
    }
    if (f.n_runs) {
        s.run.n_runs = *f.n_runs;
    }
    if (f.sigma_y2) {
        s.run.model.sigma_y2 = *f.sigma_y2;
    }
    apply_config(overrides, s);
    s.run.validate();
    return s;
}

std::vector<double> grid_or(const Flags& f, const std::vector<double>& fallback) {
    return f.grid ? parse_double_list(*f.grid) : fallback;
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
    fs::path p = out;
    p.replace_filename(out.stem().string() + suffix + out.extension().string());
    return p;
}

void write_or_print(const Flags& f, const std::string& text) {
    if (f.out) {
        write_text_file(*f.out, text);
    } else {
        std::cout << text;
    }
}

const std::string& require_out(const Flags& f, const char* what) {
    if (!f.out) {
        throw std::invalid_argument(std::string(what) + " needs --out");
    }
    return *f.out;
}

int cmd_simulate(const Flags& f) {
    const ExperimentSettings s = resolve(f);
    const fs::path out = require_out(f, "simulate");
    const RunConfig& c = s.run;
    const GaussianBelief<3> x0(c.x0_mean, Eigen::Matrix3d::Identity());
    const Trajectory<3> truth =
        simulate_ground_truth(c.model, c.theta_true, x0, c.t_steps(), derive_seed(c.seed, 0, SeedStream::data));
    write_states_csv(truth, out);
    write_observations_csv(truth, sibling(out, "_obs"));
    std::cout << "wrote " << out.string() << " and " << sibling(out, "_obs").string() << '\n';
    return 0;
}

void print_run_summary(const RunResult& r) {
    std::cout << "run " << r.run_index << ": nmse_x " << csv::format_double(r.mean_nmse_x) << " nmse_theta "
              << csv::format_double(r.mean_nmse_theta) << " restarts " << r.total_restarts << " wall_s "
              << csv::format_double(r.wall_seconds);
    if (r.failed) {
        std::cout << " FAILED (" << r.failure << ")";
    }
    std::cout << '\n';
}

int cmd_run(const Flags& f) {
    const ExperimentSettings s = resolve(f);
    const BatchResult batch = run_experiment(s.run);
    if (s.run.n_runs == 1 && !f.out && s.format == OutputFormat::csv) {
        std::cout << format_results_csv(batch.runs.front().rows);
        return batch.failures == 0 ? 0 : 2;
    }
    if (f.out) {
        for (const auto& r : batch.runs) {
            const fs::path path =
                s.run.n_runs == 1 ? fs::path(*f.out) : sibling(*f.out, "_run" + std::to_string(r.run_index));
            emit_results(r.rows, path, s.format);
        }
    } else if (s.format == OutputFormat::svg) {
        require_out(f, "svg output");
    }
    for (const auto& r : batch.runs) {
        print_run_summary(r);
    }
    std::cout << "mean over " << batch.runs.size() - static_cast<std::size_t>(batch.failures)
              << " runs: nmse_x " << csv::format_double(batch.mean_nmse_x) << " nmse_theta "
              << csv::format_double(batch.mean_nmse_theta) << " wall_s "
              << csv::format_double(batch.mean_wall_seconds) << " failures " << batch.failures << '\n';
    return batch.failures == 0 ? 0 : 2;
}

int cmd_sweep_lambda(const Flags& f) {
    const ExperimentSettings s = resolve(f);
    const auto rows = sweep_lambda(s.run, grid_or(f, s.lambda_grid), s.norms);
    if (s.format == OutputFormat::svg) {
        PlotSpec plot{"NMSE_theta against lambda", "lambda", "mean NMSE_theta", true, true, {}};
        for (PNorm norm : s.norms) {
            PlotSeries series{"p = " + std::string(to_string(norm)), {}, {}};
            for (const auto& r : rows) {
                if (r.norm == norm) {
                    series.x.push_back(r.lambda);
                    series.y.push_back(r.mean_nmse_theta);
                }
            }
            plot.series.push_back(std::move(series));
        }
        write_text_file(require_out(f, "svg output"), render_svg(plot));
        return 0;
    }
    write_or_print(f, format_lambda_sweep_csv(rows));
    return 0;
}

int cmd_sweep_noise(const Flags& f) {
    const ExperimentSettings s = resolve(f);
    const auto rows = noise_sweep(s.run, grid_or(f, s.sigma_y2_grid));
    if (s.format == OutputFormat::svg) {
        PlotSpec plot{"NMSE against observation noise", "sigma_y^2", "mean NMSE (t > 5)", true, true, {}};
        PlotSeries sx{"NMSE_x", {}, {}};
        PlotSeries st{"NMSE_theta", {}, {}};
        for (const auto& r : rows) {
            sx.x.push_back(r.sigma_y2);
            sx.y.push_back(r.late_nmse_x);
            st.x.push_back(r.sigma_y2);
            st.y.push_back(r.late_nmse_theta);
        }
        plot.series = {std::move(sx), std::move(st)};
        write_text_file(require_out(f, "svg output"), render_svg(plot));
        return 0;
    }
    write_or_print(f, format_noise_sweep_csv(rows));
    return 0;
}

int cmd_continuity(const Flags& f) {
    const ExperimentSettings s = resolve(f);
    const auto rows = continuity_experiment(s.run, grid_or(f, s.sigma_e2_grid));
    if (s.format == OutputFormat::svg) {
        PlotSpec plot{"NMSE_x under parameter perturbation", "mean ||theta - theta'||_2", "mean NMSE_x", true, true,
                      {}};
        PlotSeries series{"EKF with theta'", {}, {}};
        for (const auto& r : rows) {
            series.x.push_back(r.mean_norm_2);
            series.y.push_back(r.mean_nmse_x);
        }
        plot.series.push_back(std::move(series));
        write_text_file(require_out(f, "svg output"), render_svg(plot));
        return 0;
    }
    write_or_print(f, format_continuity_csv(rows));
    return 0;
}

int cmd_compare(const Flags& f) {
    const ExperimentSettings s = resolve(f);
    const auto results = compare_algorithms(s.run, s.algorithms);
    if (f.out) {
        for (const auto& cmp : results) {
            emit_results(cmp.mean_curve, sibling(*f.out, "_" + std::string(to_string(cmp.algorithm))), s.format);
        }
    }
    std::cout << "algorithm,mean_nmse_theta,mean_nmse_x,mean_wall_s,runs,failures\n";
    for (const auto& cmp : results) {
        const auto& b = cmp.batch;
        std::cout << to_string(cmp.algorithm) << ',' << csv::format_double(b.mean_nmse_theta) << ','
                  << csv::format_double(b.mean_nmse_x) << ',' << csv::format_double(b.mean_wall_seconds) << ','
                  << b.runs.size() - static_cast<std::size_t>(b.failures) << ',' << b.failures << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nested Gaussian filters for joint state and parameter estimation"};
    app.require_subcommand(1);
    Flags flags;

    auto* simulate = app.add_subcommand("simulate", "Write a ground-truth trajectory and its observations");
    auto* run = app.add_subcommand("run", "Run one configuration over n_runs seeded runs");
    auto* sweep_l = app.add_subcommand("sweep-lambda", "Sweep the recursion threshold over norms");
    auto* sweep_n = app.add_subcommand("sweep-noise", "Sweep the observation noise variance");
    auto* continuity = app.add_subcommand("continuity", "Known-parameter EKF under parameter perturbation");
    auto* compare = app.add_subcommand("compare", "Compare algorithms on shared data");
    for (auto* cmd : {simulate, run, sweep_l, sweep_n, continuity, compare}) {
        add_common_flags(cmd, flags);
    }
    for (auto* cmd : {sweep_l, sweep_n, continuity}) {
        cmd->add_option("--grid", flags.grid, "Comma-separated grid");
    }
    compare->add_option("--algorithms", flags.algorithms, "Comma-separated algorithm list");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "ngf: error: %s\n", e.what());
        return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
    }

    try {
        if (*simulate) {
            return cmd_simulate(flags);
        }
        if (*run) {
            return cmd_run(flags);
        }
        if (*sweep_l) {
            return cmd_sweep_lambda(flags);
        }
        if (*sweep_n) {
            return cmd_sweep_noise(flags);
        }
        if (*continuity) {
            return cmd_continuity(flags);
        }
        if (*compare) {
            return cmd_compare(flags);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "ngf: error: %s\n", e.what());
        return 1;
    }
    return 1;
}
