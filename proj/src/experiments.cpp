#include "ngf/experiments.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <locale>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>

#include "ngf/baselines.hpp"
#include "ngf/csv.hpp"
#include "ngf/ekf.hpp"
#include "ngf/error.hpp"

namespace ngf {

namespace {

constexpr std::array<std::pair<Algorithm, std::string_view>, 5> kAlgorithmNames{{
    {Algorithm::nested_ukf_ekf, "nested_ukf_ekf"},
    {Algorithm::nested_ckf_ekf, "nested_ckf_ekf"},
    {Algorithm::augmented_ukf, "augmented_ukf"},
    {Algorithm::augmented_enkf, "augmented_enkf"},
    {Algorithm::smc_ekf, "smc_ekf"},
}};

bool is_nested(Algorithm a) {
    return a == Algorithm::nested_ukf_ekf || a == Algorithm::nested_ckf_ekf;
}

GaussianBelief<3> state_prior(const RunConfig& config) {
    return GaussianBelief<3>(config.x0_mean, Eigen::Matrix3d::Identity());
}

Trajectory<3> simulate_run(const RunConfig& config, int run_index) {
    return simulate_ground_truth(config.model, config.theta_true, state_prior(config), config.t_steps(),
                                 derive_seed(config.seed, run_index, SeedStream::data));
}

GaussianBelief<3> draw_parameter_prior(const RunConfig& config, int run_index) {
    std::mt19937_64 rng(derive_seed(config.seed, run_index, SeedStream::prior));
    Eigen::Vector3d mean;
    for (int j = 0; j < 3; ++j) {
        std::uniform_real_distribution<double> u(config.theta_true(j) - config.prior_offset(j),
                                                 config.theta_true(j) + config.prior_offset(j));
        mean(j) = u(rng);
    }
    return GaussianBelief<3>(mean, Eigen::Matrix3d::Identity());
}

struct Estimate {
    Eigen::Vector3d x;
    Eigen::Vector3d theta;
    long restarts = 0;
};

void finish_means(RunResult& result) {
    double sx = 0.0;
    double st = 0.0;
    std::int64_t ns = 0;
    long restarts = 0;
    for (const auto& row : result.rows) {
        sx += row.nmse_x;
        st += row.nmse_theta;
        ns += row.wall_ns;
        restarts += row.restart_count;
    }
    const auto n = static_cast<double>(result.rows.size());
    result.mean_nmse_x = result.rows.empty() ? 0.0 : sx / n;
    result.mean_nmse_theta = result.rows.empty() ? 0.0 : st / n;
    result.wall_seconds = static_cast<double>(ns) * 1e-9;
    result.total_restarts = restarts;
}

template <typename Step>
void drive(const RunConfig& config, const Trajectory<3>& truth, RunResult& result, Step&& step) {
    using clock = std::chrono::steady_clock;
    result.rows.reserve(truth.observations.size());
    try {
        for (std::size_t k = 0; k < truth.observations.size(); ++k) {
            const auto start = clock::now();
            const Estimate est = step(k);
            const auto stop = clock::now();
            const long micro_step = truth.observations[k].step;
            ResultRow row;
            row.t = static_cast<double>(micro_step) * config.model.delta;
            row.nmse_x = nmse(truth.states[static_cast<std::size_t>(micro_step)], est.x);
            row.nmse_theta = nmse(config.theta_true, est.theta);
            row.theta_hat = est.theta;
            row.restart_count = est.restarts;
            row.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count();
            if (!std::isfinite(row.nmse_x) || !std::isfinite(row.nmse_theta)) {
                throw FilterError("filter diverged");
            }
            result.rows.push_back(row);
        }
    } catch (const std::exception& e) {
        result.failed = true;
        result.failure = e.what();
    }
    finish_means(result);
}

template <typename T, typename Fn>
std::vector<T> map_runs(int n_runs, Execution exec, Fn&& fn) {
    std::vector<T> out(static_cast<std::size_t>(n_runs));
    if (exec == Execution::serial) {
        for (int k = 0; k < n_runs; ++k) {
            out[static_cast<std::size_t>(k)] = fn(k);
        }
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_runs));
#pragma omp parallel for schedule(dynamic, 1)
    for (int k = 0; k < n_runs; ++k) {
        try {
            out[static_cast<std::size_t>(k)] = fn(k);
        } catch (...) {
            errors[static_cast<std::size_t>(k)] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return out;
}

std::string escape_xml(std::string_view text) {
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

bool parse_bool(std::string_view text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") {
        return true;
    }
    if (text == "false" || text == "0" || text == "no" || text == "off") {
        return false;
    }
    throw std::invalid_argument("expected a boolean, got '" + std::string(text) + "'");
}

Eigen::Vector3d parse_vector3(std::string_view text) {
    const std::vector<double> v = parse_double_list(text);
    if (v.size() != 3) {
        throw std::invalid_argument("expected three comma-separated numbers, got '" + std::string(text) + "'");
    }
    return {v[0], v[1], v[2]};
}

template <typename T, typename Parse>
std::vector<T> parse_list(std::string_view text, Parse&& parse) {
    std::vector<T> out;
    for (std::string_view item : csv::split(text, ',')) {
        item = csv::trim(item);
        if (!item.empty()) {
            out.push_back(parse(item));
        }
    }
    return out;
}

} // namespace

std::string_view to_string(Algorithm algorithm) {
    for (const auto& [a, name] : kAlgorithmNames) {
        if (a == algorithm) {
            return name;
        }
    }
    throw std::invalid_argument("unknown algorithm");
}

Algorithm parse_algorithm(std::string_view name) {
    for (const auto& [a, known] : kAlgorithmNames) {
        if (known == name) {
            return a;
        }
    }
    throw std::invalid_argument("unknown algorithm '" + std::string(name) + "'");
}

std::string_view to_string(PNorm norm) {
    switch (norm) {
    case PNorm::one: return "1";
    case PNorm::two: return "2";
    case PNorm::infinity: return "inf";
    }
    throw std::invalid_argument("unknown norm");
}

PNorm parse_norm(std::string_view name) {
    if (name == "1") {
        return PNorm::one;
    }
    if (name == "2") {
        return PNorm::two;
    }
    if (name == "inf" || name == "infinity" || name == "max") {
        return PNorm::infinity;
    }
    throw std::invalid_argument("unknown norm '" + std::string(name) + "' (expected 1, 2 or inf)");
}

void RunConfig::validate() const {
    model.validate();
    nested.validate();
    if (!(t_end >= 0.0) || !std::isfinite(t_end)) {
        throw std::invalid_argument("t_end must be a non-negative number");
    }
    if (n_runs < 1) {
        throw std::invalid_argument("n_runs must be at least 1");
    }
    if (enkf_members < 2) {
        throw std::invalid_argument("enkf_members must be at least 2");
    }
    if (smc_particles < 1) {
        throw std::invalid_argument("smc_particles must be at least 1");
    }
    if (!theta_true.allFinite() || !prior_offset.allFinite() || (prior_offset.array() < 0.0).any()) {
        throw std::invalid_argument("theta_true and prior_offset must be finite, prior_offset non-negative");
    }
    if (theta_true.isZero(0.0)) {
        throw std::invalid_argument("theta_true must be nonzero");
    }
}

long RunConfig::t_steps() const {
    return std::lround(t_end / model.delta);
}

double nmse(const Eigen::Ref<const Eigen::VectorXd>& truth, const Eigen::Ref<const Eigen::VectorXd>& estimate) {
    if (truth.size() != estimate.size()) {
        throw std::invalid_argument("nmse: dimension mismatch");
    }
    const double denom = truth.squaredNorm();
    if (!(denom > 0.0)) {
        throw std::invalid_argument("undefined NMSE");
    }
    return (truth - estimate).squaredNorm() / denom;
}

std::uint64_t derive_seed(std::uint64_t seed, int run, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffU), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(run), stream};
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    return (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
}

std::uint64_t derive_seed(std::uint64_t seed, int run, SeedStream stream) {
    return derive_seed(seed, run, static_cast<std::uint32_t>(stream));
}

RunResult run_single(const RunConfig& config, int run_index) {
    config.validate();
    RunResult result;
    result.run_index = run_index;
    if (config.t_steps() == 0) {
        return result;
    }
    const Trajectory<3> truth = simulate_run(config, run_index);
    const GaussianBelief<3> prior_x = state_prior(config);
    const GaussianBelief<3> prior_theta = draw_parameter_prior(config, run_index);
    const Lorenz63Model model = make_lorenz63_model(config.model);
    const std::span<const Observation<3>> obs(truth.observations);
    std::mt19937_64 rng(derive_seed(config.seed, run_index,
                                    static_cast<std::uint32_t>(SeedStream::algorithm_base) +
                                        static_cast<std::uint32_t>(config.algorithm)));
    const int micro_steps = config.model.m_o;

    switch (config.algorithm) {
    case Algorithm::nested_ukf_ekf:
    case Algorithm::nested_ckf_ekf: {
        NestedFilterConfig nc = config.nested;
        nc.micro_steps = micro_steps;
        if (config.algorithm == Algorithm::nested_ckf_ekf) {
            nc.point_rule = PointRule::cubature();
        } else if (nc.point_rule.kind != PointRule::Kind::unscented) {
            nc.point_rule = PointRule::unscented();
        }
        auto state = initialize<3, 3>(prior_theta, prior_x, nc);
        drive(config, truth, result, [&](std::size_t k) {
            state = outer_step(state, obs.first(k + 1), model, prior_x, nc, config.inner_execution);
            return Estimate{state.state_belief.mean, state.param_belief.mean, state.restart_count};
        });
        break;
    }
    case Algorithm::augmented_ukf: {
        AugmentationConfig<3> ac{micro_steps, std::nullopt, default_param_jitter(prior_theta)};
        auto state = make_augmented_state(prior_x, prior_theta);
        drive(config, truth, result, [&](std::size_t k) {
            state = augmented_ukf_step(state, obs[k].value, model, ac);
            return Estimate{state.state_mean(3), state.param_mean(3), 0};
        });
        break;
    }
    case Algorithm::augmented_enkf: {
        AugmentationConfig<3> ac{micro_steps, std::nullopt, default_param_jitter(prior_theta)};
        auto ensemble = sample_ensemble<3, 3>(prior_x, prior_theta, config.enkf_members, rng);
        drive(config, truth, result, [&](std::size_t k) {
            ensemble = augmented_enkf_step(ensemble, obs[k].value, model, ac, rng);
            const Vector<6> mean = ensemble_moments<3, 3>(ensemble).mean;
            return Estimate{mean.head<3>(), mean.tail<3>(), 0};
        });
        break;
    }
    case Algorithm::smc_ekf: {
        SmcConfig<3> sc{micro_steps, default_smc_jitter(prior_theta, config.smc_particles), 0.5};
        auto cloud = init_particle_cloud<3, 3>(prior_theta, prior_x, config.smc_particles, rng);
        drive(config, truth, result, [&](std::size_t k) {
            cloud = smc_ekf_step(cloud, obs[k].value, model, sc, rng, config.inner_execution);
            return Estimate{cloud.state_estimate, cloud.param_estimate, 0};
        });
        break;
    }
    }
    return result;
}

BatchResult summarize(std::vector<RunResult> runs) {
    BatchResult batch;
    batch.runs = std::move(runs);
    int ok = 0;
    for (const auto& run : batch.runs) {
        if (run.failed) {
            ++batch.failures;
            continue;
        }
        ++ok;
        batch.mean_nmse_x += run.mean_nmse_x;
        batch.mean_nmse_theta += run.mean_nmse_theta;
        batch.mean_wall_seconds += run.wall_seconds;
        batch.mean_restarts += static_cast<double>(run.total_restarts);
    }
    if (ok > 0) {
        batch.mean_nmse_x /= ok;
        batch.mean_nmse_theta /= ok;
        batch.mean_wall_seconds /= ok;
        batch.mean_restarts /= ok;
    }
    return batch;
}

BatchResult run_experiment(const RunConfig& config, Execution runs) {
    config.validate();
    return summarize(map_runs<RunResult>(config.n_runs, runs, [&](int k) { return run_single(config, k); }));
}

double window_mean_nmse_x(const RunResult& run, double t_from) {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : run.rows) {
        if (t_from < 0.0 || row.t > t_from) {
            sum += row.nmse_x;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / n;
}

double window_mean_nmse_theta(const RunResult& run, double t_from) {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : run.rows) {
        if (t_from < 0.0 || row.t > t_from) {
            sum += row.nmse_theta;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / n;
}

std::vector<double> default_sigma_e2_grid() {
    return {1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
}

std::vector<double> default_lambda_grid() {
    return {1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
}

std::vector<double> default_sigma_y2_grid() {
    return {1.0, 2.0, 4.0, 10.0};
}

std::vector<ContinuityRow> continuity_experiment(const RunConfig& base, const std::vector<double>& sigma_e2_grid,
                                                 Execution runs) {
    base.validate();
    for (double v : sigma_e2_grid) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("continuity_experiment: perturbation variances must be non-negative");
        }
    }
    struct Cell {
        double norm_2 = 0.0;
        double norm_inf = 0.0;
        double nmse_x = 0.0;
        bool failed = false;
    };
    const Lorenz63Model model = make_lorenz63_model(base.model);
    const GaussianBelief<3> prior_x = state_prior(base);
    const int micro_steps = base.model.m_o;

    // One trajectory per run shared by every grid value.
    auto per_run = map_runs<std::vector<Cell>>(base.n_runs, runs, [&](int k) {
        std::vector<Cell> cells(sigma_e2_grid.size());
        if (base.t_steps() == 0) {
            return cells;
        }
        const Trajectory<3> truth = simulate_run(base, k);
        std::mt19937_64 rng(derive_seed(base.seed, k, SeedStream::prior));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t g = 0; g < sigma_e2_grid.size(); ++g) {
            Eigen::Vector3d e;
            for (int j = 0; j < 3; ++j) {
                e(j) = normal(rng);
            }
            e *= std::sqrt(sigma_e2_grid[g]);
            const Eigen::Vector3d theta = base.theta_true + e;
            Cell& cell = cells[g];
            cell.norm_2 = e.norm();
            cell.norm_inf = e.lpNorm<Eigen::Infinity>();
            try {
                GaussianBelief<3> belief = prior_x;
                double sum = 0.0;
                for (const auto& o : truth.observations) {
                    belief = ekf_update(ekf_predict(belief, theta, model, micro_steps), o.value, theta, model);
                    sum += nmse(truth.states[static_cast<std::size_t>(o.step)], belief.mean);
                }
                cell.nmse_x = sum / static_cast<double>(truth.observations.size());
                if (!std::isfinite(cell.nmse_x)) {
                    cell.failed = true;
                }
            } catch (const std::exception&) {
                cell.failed = true;
            }
        }
        return cells;
    });

    std::vector<ContinuityRow> rows;
    for (std::size_t g = 0; g < sigma_e2_grid.size(); ++g) {
        ContinuityRow row;
        row.sigma_e2 = sigma_e2_grid[g];
        for (const auto& cells : per_run) {
            const Cell& c = cells[g];
            if (c.failed) {
                ++row.failures;
                continue;
            }
            ++row.runs;
            row.mean_norm_2 += c.norm_2;
            row.mean_norm_inf += c.norm_inf;
            row.mean_nmse_x += c.nmse_x;
        }
        if (row.runs > 0) {
            row.mean_norm_2 /= row.runs;
            row.mean_norm_inf /= row.runs;
            row.mean_nmse_x /= row.runs;
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<LambdaSweepRow> sweep_lambda(const RunConfig& base, const std::vector<double>& lambda_grid,
                                         const std::vector<PNorm>& norms, Execution runs) {
    if (!is_nested(base.algorithm)) {
        throw std::invalid_argument("sweep_lambda: algorithm must be a nested filter");
    }
    std::vector<LambdaSweepRow> rows;
    for (double lambda : lambda_grid) {
        for (PNorm norm : norms) {
            RunConfig cfg = base;
            cfg.nested.lambda = lambda;
            cfg.nested.norm = norm;
            const BatchResult batch = run_experiment(cfg, runs);
            LambdaSweepRow row;
            row.lambda = lambda;
            row.norm = norm;
            row.mean_nmse_theta = batch.mean_nmse_theta;
            row.mean_nmse_x = batch.mean_nmse_x;
            row.mean_wall_seconds = batch.mean_wall_seconds;
            row.mean_restarts = batch.mean_restarts;
            row.failures = batch.failures;
            row.runs = static_cast<int>(batch.runs.size()) - batch.failures;
            rows.push_back(row);
        }
    }
    return rows;
}

std::vector<NoiseSweepRow> noise_sweep(const RunConfig& base, const std::vector<double>& sigma_y2_grid,
                                       Execution runs) {
    std::vector<NoiseSweepRow> rows;
    for (double sigma_y2 : sigma_y2_grid) {
        RunConfig cfg = base;
        cfg.model.sigma_y2 = sigma_y2;
        const BatchResult batch = run_experiment(cfg, runs);
        NoiseSweepRow row;
        row.sigma_y2 = sigma_y2;
        row.mean_nmse_theta = batch.mean_nmse_theta;
        row.mean_nmse_x = batch.mean_nmse_x;
        row.failures = batch.failures;
        for (const auto& run : batch.runs) {
            if (run.failed) {
                continue;
            }
            ++row.runs;
            row.late_nmse_theta += window_mean_nmse_theta(run, 5.0);
            row.late_nmse_x += window_mean_nmse_x(run, 5.0);
        }
        if (row.runs > 0) {
            row.late_nmse_theta /= row.runs;
            row.late_nmse_x /= row.runs;
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<ResultRow> mean_curve(const BatchResult& batch) {
    std::vector<ResultRow> curve;
    std::vector<std::int64_t> wall_sum;
    int ok = 0;
    for (const auto& run : batch.runs) {
        if (run.failed) {
            continue;
        }
        ++ok;
        if (curve.empty()) {
            curve.resize(run.rows.size());
            wall_sum.assign(run.rows.size(), 0);
        }
        const std::size_t n = std::min(curve.size(), run.rows.size());
        for (std::size_t i = 0; i < n; ++i) {
            curve[i].t = run.rows[i].t;
            curve[i].nmse_x += run.rows[i].nmse_x;
            curve[i].nmse_theta += run.rows[i].nmse_theta;
            curve[i].theta_hat += run.rows[i].theta_hat;
            curve[i].restart_count += run.rows[i].restart_count;
            wall_sum[i] += run.rows[i].wall_ns;
        }
    }
    for (std::size_t i = 0; i < curve.size(); ++i) {
        curve[i].nmse_x /= ok;
        curve[i].nmse_theta /= ok;
        curve[i].theta_hat /= ok;
        curve[i].wall_ns = wall_sum[i] / ok;
    }
    return curve;
}

std::vector<AlgorithmComparison> compare_algorithms(const RunConfig& base, const std::vector<Algorithm>& algorithms,
                                                    Execution runs) {
    std::vector<AlgorithmComparison> out;
    for (Algorithm a : algorithms) {
        RunConfig cfg = base;
        cfg.algorithm = a;
        AlgorithmComparison cmp;
        cmp.algorithm = a;
        cmp.batch = run_experiment(cfg, runs);
        cmp.mean_curve = mean_curve(cmp.batch);
        out.push_back(std::move(cmp));
    }
    return out;
}

// ---------------------------------------------------------------------------

OutputFormat parse_output_format(std::string_view name) {
    if (name == "csv") {
        return OutputFormat::csv;
    }
    if (name == "svg" || name == "svg_plot") {
        return OutputFormat::svg;
    }
    throw std::invalid_argument("unknown output format '" + std::string(name) + "' (expected csv or svg)");
}

std::string format_results_csv(const std::vector<ResultRow>& rows) {
    std::string out(kResultHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += csv::format_double(r.t);
        out += ',';
        out += csv::format_double(r.nmse_x);
        out += ',';
        out += csv::format_double(r.nmse_theta);
        for (int j = 0; j < 3; ++j) {
            out += ',';
            out += csv::format_double(r.theta_hat(j));
        }
        out += ',';
        out += std::to_string(r.restart_count);
        out += ',';
        out += std::to_string(r.wall_ns);
        out += '\n';
    }
    return out;
}

std::vector<ResultRow> parse_results_csv(std::string_view text) {
    std::vector<ResultRow> rows;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const std::size_t end = text.find('\n');
        std::string_view line = text.substr(0, end);
        text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line_no == 1) {
            if (line != kResultHeader) {
                throw std::invalid_argument("results CSV: unexpected header");
            }
            continue;
        }
        if (line.empty()) {
            continue;
        }
        const auto fields = csv::split(line, ',');
        if (fields.size() != 8) {
            throw std::invalid_argument("results CSV line " + std::to_string(line_no) + ": expected 8 fields");
        }
        ResultRow r;
        r.t = csv::parse_double(fields[0]);
        r.nmse_x = csv::parse_double(fields[1]);
        r.nmse_theta = csv::parse_double(fields[2]);
        for (int j = 0; j < 3; ++j) {
            r.theta_hat(j) = csv::parse_double(fields[3 + static_cast<std::size_t>(j)]);
        }
        r.restart_count = static_cast<long>(csv::parse_int(fields[6]));
        r.wall_ns = csv::parse_int(fields[7]);
        rows.push_back(r);
    }
    if (line_no == 0) {
        throw std::invalid_argument("results CSV: missing header");
    }
    return rows;
}

std::string render_svg(const PlotSpec& plot) {
    constexpr double width = 720.0;
    constexpr double height = 440.0;
    constexpr double left = 80.0;
    constexpr double right = 170.0;
    constexpr double top = 40.0;
    constexpr double bottom = 60.0;
    static constexpr std::array<std::string_view, 6> palette{"#1f77b4", "#d62728", "#2ca02c",
                                                             "#ff7f0e", "#9467bd", "#8c564b"};

    auto tx = [&](double v) { return plot.log_x ? std::log10(v) : v; };
    auto ty = [&](double v) { return plot.log_y ? std::log10(v) : v; };
    auto usable = [&](double x, double y) {
        return std::isfinite(x) && std::isfinite(y) && (!plot.log_x || x > 0.0) && (!plot.log_y || y > 0.0);
    };

    double x_lo = std::numeric_limits<double>::infinity();
    double x_hi = -x_lo;
    double y_lo = x_lo;
    double y_hi = -x_lo;
    for (const auto& s : plot.series) {
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (usable(s.x[i], s.y[i])) {
                x_lo = std::min(x_lo, tx(s.x[i]));
                x_hi = std::max(x_hi, tx(s.x[i]));
                y_lo = std::min(y_lo, ty(s.y[i]));
                y_hi = std::max(y_hi, ty(s.y[i]));
            }
        }
    }
    if (!std::isfinite(x_lo)) {
        x_lo = 0.0;
        x_hi = 1.0;
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if (plot.log_y) {
        y_lo = std::floor(y_lo);
        y_hi = std::ceil(y_hi);
    }
    if (plot.log_x) {
        x_lo = std::floor(x_lo);
        x_hi = std::ceil(x_hi);
    }
    if (x_hi <= x_lo) {
        x_hi = x_lo + 1.0;
    }
    if (y_hi <= y_lo) {
        y_hi = y_lo + 1.0;
    }
    const double pw = width - left - right;
    const double ph = height - top - bottom;
    auto px = [&](double v) { return left + (tx(v) - x_lo) / (x_hi - x_lo) * pw; };
    auto py = [&](double v) { return top + ph - (ty(v) - y_lo) / (y_hi - y_lo) * ph; };

    std::ostringstream svg;
    svg.imbue(std::locale::classic());
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
        << escape_xml(plot.title) << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";

    auto tick_label = [](double v, bool log) {
        if (log) {
            return "1e" + std::to_string(static_cast<int>(std::lround(v)));
        }
        return csv::format_double(std::round(v * 1e6) / 1e6);
    };
    auto ticks = [](double lo, double hi, bool log) {
        std::vector<double> out;
        if (log) {
            const int step = std::max(1, static_cast<int>(std::ceil((hi - lo) / 10.0)));
            for (double v = lo; v <= hi + 1e-9; v += step) {
                out.push_back(v);
            }
        } else {
            for (int i = 0; i <= 5; ++i) {
                out.push_back(lo + (hi - lo) * i / 5.0);
            }
        }
        return out;
    };
    for (double v : ticks(y_lo, y_hi, plot.log_y)) {
        const double y = top + ph - (v - y_lo) / (y_hi - y_lo) * ph;
        svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
            << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
            << tick_label(v, plot.log_y) << "</text>\n";
    }
    for (double v : ticks(x_lo, x_hi, plot.log_x)) {
        const double x = left + (v - x_lo) / (x_hi - x_lo) * pw;
        svg << "<line x1=\"" << x << "\" y1=\"" << top << "\" x2=\"" << x << "\" y2=\"" << top + ph
            << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << x << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
            << tick_label(v, plot.log_x) << "</text>\n";
    }
    svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 16 << "\" text-anchor=\"middle\">"
        << escape_xml(plot.x_label) << "</text>\n";
    svg << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << escape_xml(plot.y_label) << "</text>\n";

    for (std::size_t s = 0; s < plot.series.size(); ++s) {
        const auto& series = plot.series[s];
        const std::string_view color = palette[s % palette.size()];
        // Unusable points (non-positive on a log axis) break the line.
        std::vector<std::string> segments(1);
        for (std::size_t i = 0; i < std::min(series.x.size(), series.y.size()); ++i) {
            if (!usable(series.x[i], series.y[i])) {
                if (!segments.back().empty()) {
                    segments.emplace_back();
                }
                continue;
            }
            std::ostringstream pt;
            pt.imbue(std::locale::classic());
            pt << px(series.x[i]) << ',' << py(series.y[i]) << ' ';
            segments.back() += pt.str();
        }
        for (const auto& seg : segments) {
            if (!seg.empty()) {
                svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << seg
                    << "\"/>\n";
            }
        }
        const double ly = top + 16.0 + 18.0 * static_cast<double>(s);
        svg << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 36 << "\" y2=\""
            << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly << "\">" << escape_xml(series.label) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void emit_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path, OutputFormat format) {
    if (format == OutputFormat::csv) {
        write_text_file(path, format_results_csv(rows));
        return;
    }
    PlotSpec plot;
    plot.title = "NMSE over time";
    plot.x_label = "t";
    plot.y_label = "NMSE";
    PlotSeries sx{"NMSE_x", {}, {}};
    PlotSeries st{"NMSE_theta", {}, {}};
    for (const auto& r : rows) {
        sx.x.push_back(r.t);
        sx.y.push_back(r.nmse_x);
        st.x.push_back(r.t);
        st.y.push_back(r.nmse_theta);
    }
    plot.series = {std::move(sx), std::move(st)};
    write_text_file(path, render_svg(plot));
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) {
        throw std::runtime_error("write to '" + path.string() + "' failed");
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string format_continuity_csv(const std::vector<ContinuityRow>& rows) {
    std::string out = "sigma_e2,mean_norm_2,mean_norm_inf,mean_nmse_x,runs,failures\n";
    for (const auto& r : rows) {
        out += csv::format_double(r.sigma_e2) + ',' + csv::format_double(r.mean_norm_2) + ',' +
               csv::format_double(r.mean_norm_inf) + ',' + csv::format_double(r.mean_nmse_x) + ',' +
               std::to_string(r.runs) + ',' + std::to_string(r.failures) + '\n';
    }
    return out;
}

std::string format_lambda_sweep_csv(const std::vector<LambdaSweepRow>& rows) {
    std::string out = "lambda,norm,mean_nmse_theta,mean_nmse_x,mean_wall_s,mean_restarts,runs,failures\n";
    for (const auto& r : rows) {
        out += csv::format_double(r.lambda) + ',' + std::string(to_string(r.norm)) + ',' +
               csv::format_double(r.mean_nmse_theta) + ',' + csv::format_double(r.mean_nmse_x) + ',' +
               csv::format_double(r.mean_wall_seconds) + ',' + csv::format_double(r.mean_restarts) + ',' +
               std::to_string(r.runs) + ',' + std::to_string(r.failures) + '\n';
    }
    return out;
}

std::string format_noise_sweep_csv(const std::vector<NoiseSweepRow>& rows) {
    std::string out = "sigma_y2,mean_nmse_theta,mean_nmse_x,late_nmse_theta,late_nmse_x,runs,failures\n";
    for (const auto& r : rows) {
        out += csv::format_double(r.sigma_y2) + ',' + csv::format_double(r.mean_nmse_theta) + ',' +
               csv::format_double(r.mean_nmse_x) + ',' + csv::format_double(r.late_nmse_theta) + ',' +
               csv::format_double(r.late_nmse_x) + ',' + std::to_string(r.runs) + ',' +
               std::to_string(r.failures) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------

ConfigMap parse_config_text(std::string_view text) {
    ConfigMap values;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const std::size_t end = text.find('\n');
        std::string_view line = text.substr(0, end);
        text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
        ++line_no;
        if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = csv::trim(line);
        if (line.empty()) {
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string_view key = csv::trim(line.substr(0, eq));
        if (key.empty()) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
        }
        values[std::string(key)] = std::string(csv::trim(line.substr(eq + 1)));
    }
    return values;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
    try {
        return parse_config_text(read_text_file(path));
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

std::vector<double> parse_double_list(std::string_view text) {
    return parse_list<double>(text, [](std::string_view s) { return csv::parse_double(s); });
}

void apply_config(const ConfigMap& values, ExperimentSettings& settings) {
    RunConfig& run = settings.run;
    auto as_int = [](std::string_view v) { return csv::parse_int(v); };
    auto as_count = [&](std::string_view v) {
        const long long n = as_int(v);
        if (n < 0) {
            throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
        }
        return static_cast<std::size_t>(n);
    };
    for (const auto& [key, value] : values) {
        try {
            const std::string_view v = value;
            if (key == "lambda") {
                run.nested.lambda = csv::parse_double(v);
            } else if (key == "norm") {
                run.nested.norm = parse_norm(v);
            } else if (key == "algorithm") {
                run.algorithm = parse_algorithm(v);
            } else if (key == "seed") {
                run.seed = as_count(v);
            } else if (key == "t_end") {
                run.t_end = csv::parse_double(v);
            } else if (key == "n_runs") {
                run.n_runs = static_cast<int>(as_int(v));
            } else if (key == "delta") {
                run.model.delta = csv::parse_double(v);
            } else if (key == "sigma2") {
                run.model.sigma2 = csv::parse_double(v);
            } else if (key == "sigma_y2") {
                run.model.sigma_y2 = csv::parse_double(v);
            } else if (key == "k_o") {
                run.model.k_o = csv::parse_double(v);
            } else if (key == "m_o") {
                run.model.m_o = static_cast<int>(as_int(v));
            } else if (key == "observed_indices") {
                run.model.observed_indices =
                    parse_list<int>(v, [&](std::string_view s) { return static_cast<int>(as_int(s)); });
            } else if (key == "theta_true") {
                run.theta_true = parse_vector3(v);
            } else if (key == "prior_offset") {
                run.prior_offset = parse_vector3(v);
            } else if (key == "x0_mean") {
                run.x0_mean = parse_vector3(v);
            } else if (key == "kappa") {
                run.nested.point_rule = PointRule::unscented(csv::parse_double(v));
            } else if (key == "recursive") {
                run.nested.recursive = parse_bool(v);
            } else if (key == "full_mixture_state_cov") {
                run.nested.full_mixture_state_cov = parse_bool(v);
            } else if (key == "enkf_members") {
                run.enkf_members = as_count(v);
            } else if (key == "smc_particles") {
                run.smc_particles = as_count(v);
            } else if (key == "lambda_grid") {
                settings.lambda_grid = parse_double_list(v);
            } else if (key == "norms") {
                settings.norms = parse_list<PNorm>(v, parse_norm);
            } else if (key == "sigma_e2_grid") {
                settings.sigma_e2_grid = parse_double_list(v);
            } else if (key == "sigma_y2_grid") {
                settings.sigma_y2_grid = parse_double_list(v);
            } else if (key == "algorithms") {
                settings.algorithms = parse_list<Algorithm>(v, parse_algorithm);
            } else if (key == "format") {
                settings.format = parse_output_format(v);
            } else {
                throw std::invalid_argument("unknown key");
            }
        } catch (const std::exception& e) {
            throw std::invalid_argument("config key '" + key + "': " + e.what());
        }
    }
}

} // namespace ngf
