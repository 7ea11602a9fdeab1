/**
 * @file experiments.hpp
 * @brief Experiment harness on the stochastic Lorenz 63 benchmark: seeded
 * single runs, batches, sweeps over lambda / observation noise, the
 * parameter-perturbation continuity study and algorithm comparisons.
 *
 * Every run k of a batch with seed s draws from independent sub-streams
 * seeded by std::seed_seq{s_lo, s_hi, k, stream}:
 *   stream 0      ground-truth trajectory and observations
 *   stream 1      prior mean draw (and parameter perturbation)
 *   stream 2 + a  filter randomness of algorithm a
 * so different algorithms see identical data and priors.
 */
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ngf/lorenz63.hpp"
#include "ngf/nested_filter.hpp"

namespace ngf {

enum class Algorithm { nested_ukf_ekf, nested_ckf_ekf, augmented_ukf, augmented_enkf, smc_ekf };

std::string_view to_string(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view name);
std::string_view to_string(PNorm norm);
PNorm parse_norm(std::string_view name);

struct RunConfig {
    Lorenz63Config model;
    Eigen::Vector3d theta_true{10.0, 28.0, 8.0 / 3.0};
    // Prior mean is drawn from U(theta_true - prior_offset, theta_true + prior_offset).
    Eigen::Vector3d prior_offset{3.0, 1.0, 0.5};
    Eigen::Vector3d x0_mean{-6.0, -5.5, -24.5};
    double t_end = 10.0;
    Algorithm algorithm = Algorithm::nested_ukf_ekf;
    NestedFilterConfig nested;
    std::size_t enkf_members = 100;
    std::size_t smc_particles = 120;
    std::uint64_t seed = 1;
    int n_runs = 20;
    // Bank/particle loop inside a run; batches parallelize over runs instead.
    Execution inner_execution = Execution::serial;

    void validate() const;
    [[nodiscard]] long t_steps() const;
};

struct ResultRow {
    double t = 0.0;
    double nmse_x = 0.0;
    double nmse_theta = 0.0;
    Eigen::Vector3d theta_hat = Eigen::Vector3d::Zero();
    long restart_count = 0;
    std::int64_t wall_ns = 0;

    bool operator==(const ResultRow&) const = default;
};

struct RunResult {
    int run_index = 0;
    std::vector<ResultRow> rows;
    double mean_nmse_x = 0.0;
    double mean_nmse_theta = 0.0;
    double wall_seconds = 0.0;
    long total_restarts = 0;
    bool failed = false;
    std::string failure;
};

struct BatchResult {
    std::vector<RunResult> runs;
    int failures = 0;
    // Means over successful runs.
    double mean_nmse_x = 0.0;
    double mean_nmse_theta = 0.0;
    double mean_wall_seconds = 0.0;
    double mean_restarts = 0.0;
};

/// ||truth - estimate||^2 / ||truth||^2.
double nmse(const Eigen::Ref<const Eigen::VectorXd>& truth, const Eigen::Ref<const Eigen::VectorXd>& estimate);

enum class SeedStream : std::uint32_t { data = 0, prior = 1, algorithm_base = 2 };

std::uint64_t derive_seed(std::uint64_t seed, int run, std::uint32_t stream);
std::uint64_t derive_seed(std::uint64_t seed, int run, SeedStream stream);

/// One seeded run of config.algorithm; filter failures are recorded, not thrown.
RunResult run_single(const RunConfig& config, int run_index);

/// config.n_runs runs; results are ordered by run index whatever the execution.
BatchResult run_experiment(const RunConfig& config, Execution runs = Execution::parallel);

BatchResult summarize(std::vector<RunResult> runs);

/// Mean of a row field over rows with t > t_from (all rows for t_from < 0).
double window_mean_nmse_x(const RunResult& run, double t_from);
double window_mean_nmse_theta(const RunResult& run, double t_from);

struct ContinuityRow {
    double sigma_e2 = 0.0;
    double mean_norm_2 = 0.0;
    double mean_norm_inf = 0.0;
    double mean_nmse_x = 0.0;
    int runs = 0;
    int failures = 0;
};

std::vector<double> default_sigma_e2_grid();

/// Known-parameter EKF run with theta' = theta_true + e, e ~ N(0, sigma_e2 I_3).
std::vector<ContinuityRow> continuity_experiment(const RunConfig& base, const std::vector<double>& sigma_e2_grid,
                                                 Execution runs = Execution::parallel);

struct LambdaSweepRow {
    double lambda = 0.0;
    PNorm norm = PNorm::two;
    double mean_nmse_theta = 0.0;
    double mean_nmse_x = 0.0;
    double mean_wall_seconds = 0.0;
    double mean_restarts = 0.0;
    int runs = 0;
    int failures = 0;
};

std::vector<double> default_lambda_grid();

/// Full factorial over grid x norms; every cell reuses the same seeds (paired runs).
std::vector<LambdaSweepRow> sweep_lambda(const RunConfig& base, const std::vector<double>& lambda_grid,
                                         const std::vector<PNorm>& norms, Execution runs = Execution::parallel);

struct NoiseSweepRow {
    double sigma_y2 = 0.0;
    double mean_nmse_theta = 0.0;
    double mean_nmse_x = 0.0;
    // Averages restricted to t > 5.
    double late_nmse_theta = 0.0;
    double late_nmse_x = 0.0;
    int runs = 0;
    int failures = 0;
};

std::vector<double> default_sigma_y2_grid();

std::vector<NoiseSweepRow> noise_sweep(const RunConfig& base, const std::vector<double>& sigma_y2_grid,
                                       Execution runs = Execution::parallel);

struct AlgorithmComparison {
    Algorithm algorithm = Algorithm::nested_ukf_ekf;
    BatchResult batch;
    // Per-time averages over successful runs; restart_count is summed.
    std::vector<ResultRow> mean_curve;
};

/// Runs each algorithm on identical per-run data and priors.
std::vector<AlgorithmComparison> compare_algorithms(const RunConfig& base, const std::vector<Algorithm>& algorithms,
                                                    Execution runs = Execution::parallel);

std::vector<ResultRow> mean_curve(const BatchResult& batch);

// ---------------------------------------------------------------------------
// Emission

enum class OutputFormat { csv, svg };

OutputFormat parse_output_format(std::string_view name);

inline constexpr std::string_view kResultHeader =
    "t,nmse_x,nmse_theta,theta_hat_1,theta_hat_2,theta_hat_3,restart_count,wall_ns";

std::string format_results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(std::string_view text);

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = true;
    std::vector<PlotSeries> series;
};

std::string render_svg(const PlotSpec& plot);

/// CSV per the result header, or an SVG with NMSE_x and NMSE_theta against t.
void emit_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path, OutputFormat format);

/// Writes @p text to @p path; I/O errors name the path.
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

std::string format_continuity_csv(const std::vector<ContinuityRow>& rows);
std::string format_lambda_sweep_csv(const std::vector<LambdaSweepRow>& rows);
std::string format_noise_sweep_csv(const std::vector<NoiseSweepRow>& rows);

// ---------------------------------------------------------------------------
// Configuration files: `key = value` lines, '#' comments, lists as comma lists.

using ConfigMap = std::map<std::string, std::string, std::less<>>;

ConfigMap parse_config_text(std::string_view text);
ConfigMap load_config_file(const std::filesystem::path& path);

std::vector<double> parse_double_list(std::string_view text);

/// Settings shared by the subcommands beyond a single RunConfig.
struct ExperimentSettings {
    RunConfig run;
    std::vector<double> lambda_grid = default_lambda_grid();
    std::vector<PNorm> norms{PNorm::two, PNorm::infinity};
    std::vector<double> sigma_e2_grid = default_sigma_e2_grid();
    std::vector<double> sigma_y2_grid = default_sigma_y2_grid();
    std::vector<Algorithm> algorithms{Algorithm::nested_ukf_ekf, Algorithm::augmented_ukf, Algorithm::augmented_enkf};
    OutputFormat format = OutputFormat::csv;
};

/// Applies recognized keys; unknown keys and malformed values throw std::invalid_argument.
void apply_config(const ConfigMap& values, ExperimentSettings& settings);

} // namespace ngf
