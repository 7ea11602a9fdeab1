#include "ngf/lorenz63.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ngf/csv.hpp"

namespace ngf {

void Lorenz63Config::validate() const {
    if (!(delta > 0.0)) {
        throw std::invalid_argument("Lorenz63Config: delta must be positive");
    }
    if (!(sigma2 >= 0.0) || !(sigma_y2 >= 0.0)) {
        throw std::invalid_argument("Lorenz63Config: noise variances must be nonnegative");
    }
    if (m_o < 1) {
        throw std::invalid_argument("Lorenz63Config: m_o must be at least 1");
    }
    if (observed_indices.empty() || observed_indices.size() > 3) {
        throw std::invalid_argument("Lorenz63Config: observed_indices must select 1 to 3 components");
    }
    int prev = 0;
    for (int idx : observed_indices) {
        if (idx < 1 || idx > 3 || idx <= prev) {
            throw std::invalid_argument("Lorenz63Config: observed_indices must be increasing values in {1,2,3}");
        }
        prev = idx;
    }
}

Eigen::Vector3d lorenz63_drift(const Eigen::Vector3d& x, const Eigen::Vector3d& theta, double delta) {
    if (!x.allFinite() || !theta.allFinite() || !std::isfinite(delta)) {
        throw std::invalid_argument("lorenz63_drift: non-finite input");
    }
    const double s = theta(0);
    const double r = theta(1);
    const double b = theta(2);
    return {x(0) - delta * s * (x(0) - x(1)),
            x(1) + delta * ((r - x(2)) * x(0) - x(1)),
            x(2) + delta * (x(0) * x(1) - b * x(2))};
}

Eigen::Matrix3d lorenz63_jacobian(const Eigen::Vector3d& x, const Eigen::Vector3d& theta, double delta) {
    if (!x.allFinite() || !theta.allFinite() || !std::isfinite(delta)) {
        throw std::invalid_argument("lorenz63_jacobian: non-finite input");
    }
    const double s = theta(0);
    const double r = theta(1);
    const double b = theta(2);
    Eigen::Matrix3d a;
    a << -s, s, 0.0,
         r - x(2), -1.0, -x(0),
         x(1), x(0), -b;
    return Eigen::Matrix3d::Identity() + delta * a;
}

ObsJacobian<3> observation_matrix(const Lorenz63Config& config) {
    ObsJacobian<3> g = ObsJacobian<3>::Zero(static_cast<Eigen::Index>(config.observed_indices.size()), 3);
    for (std::size_t row = 0; row < config.observed_indices.size(); ++row) {
        g(static_cast<Eigen::Index>(row), config.observed_indices[row] - 1) = config.k_o;
    }
    return g;
}

ObsVector<3> linear_observation(const Eigen::Vector3d& x, const Lorenz63Config& config) {
    if (!x.allFinite()) {
        throw std::invalid_argument("linear_observation: non-finite input");
    }
    ObsVector<3> y(static_cast<Eigen::Index>(config.observed_indices.size()));
    for (std::size_t row = 0; row < config.observed_indices.size(); ++row) {
        y(static_cast<Eigen::Index>(row)) = config.k_o * x(config.observed_indices[row] - 1);
    }
    return y;
}

Lorenz63Model make_lorenz63_model(const Lorenz63Config& config) {
    config.validate();
    Lorenz63Model model;
    model.dx = 3;
    model.dy = static_cast<Eigen::Index>(config.observed_indices.size());
    model.dtheta = 3;
    const double delta = config.delta;
    model.drift = [delta](const Eigen::Vector3d& x, const Eigen::Vector3d& theta) {
        return lorenz63_drift(x, theta, delta);
    };
    model.drift_jacobian = [delta](const Eigen::Vector3d& x, const Eigen::Vector3d& theta) {
        return lorenz63_jacobian(x, theta, delta);
    };
    model.obs = [config](const Eigen::Vector3d& x, const Eigen::Vector3d&) { return linear_observation(x, config); };
    const ObsJacobian<3> g = observation_matrix(config);
    model.obs_jacobian = [g](const Eigen::Vector3d&, const Eigen::Vector3d&) { return g; };
    model.state_noise_cov = config.sigma2 * config.delta * Eigen::Matrix3d::Identity();
    model.obs_noise_cov = config.sigma_y2 * ObsMatrix<3>::Identity(model.dy, model.dy);
    return model;
}

Trajectory<3> simulate_ground_truth(const Lorenz63Config& config, const Eigen::Vector3d& theta_true,
                                    const GaussianBelief<3>& x0, long t_steps, std::uint64_t rng_seed) {
    config.validate();
    if (t_steps < 0) {
        throw std::invalid_argument("simulate_ground_truth: t_steps must be nonnegative");
    }
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw3 = [&] { return Eigen::Vector3d(normal(rng), normal(rng), normal(rng)); };

    Trajectory<3> traj;
    traj.states.reserve(static_cast<std::size_t>(t_steps) + 1);
    traj.observations.reserve(static_cast<std::size_t>(t_steps / config.m_o));

    const Eigen::Matrix3d x0_sqrt = covariance_sqrt(Eigen::Matrix3d(x0.cov));
    Eigen::Vector3d x = x0.mean + x0_sqrt * draw3();
    traj.states.push_back(x);

    const double state_sd = std::sqrt(config.sigma2 * config.delta);
    const double obs_sd = std::sqrt(config.sigma_y2);
    const auto dy = static_cast<Eigen::Index>(config.observed_indices.size());
    for (long t = 1; t <= t_steps; ++t) {
        x = lorenz63_drift(x, theta_true, config.delta) + state_sd * draw3();
        traj.states.push_back(x);
        if (t % config.m_o == 0) {
            ObsVector<3> y = linear_observation(x, config);
            for (Eigen::Index i = 0; i < dy; ++i) {
                y(i) += obs_sd * normal(rng);
            }
            traj.observations.push_back({t, std::move(y)});
        }
    }
    return traj;
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    return out;
}

std::vector<std::vector<std::string>> read_csv_body(const std::filesystem::path& path, std::string& header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    }
    std::vector<std::vector<std::string>> rows;
    std::string line;
    if (!std::getline(in, header)) {
        throw std::runtime_error("'" + path.string() + "' is empty");
    }
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) {
            continue;
        }
        std::vector<std::string> fields;
        for (auto f : csv::split(line)) {
            fields.emplace_back(f);
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

} // namespace

void write_states_csv(const Trajectory<3>& trajectory, const std::filesystem::path& path) {
    auto out = open_for_write(path);
    out << "t,x1,x2,x3\n";
    for (std::size_t t = 0; t < trajectory.states.size(); ++t) {
        const auto& x = trajectory.states[t];
        out << t << ',' << csv::format_double(x(0)) << ',' << csv::format_double(x(1)) << ','
            << csv::format_double(x(2)) << '\n';
    }
    if (!out) {
        throw std::runtime_error("write to '" + path.string() + "' failed");
    }
}

void write_observations_csv(const Trajectory<3>& trajectory, const std::filesystem::path& path) {
    auto out = open_for_write(path);
    const Eigen::Index dy = trajectory.observations.empty() ? 0 : trajectory.observations.front().value.size();
    out << 't';
    for (Eigen::Index i = 1; i <= dy; ++i) {
        out << ",y" << i;
    }
    out << '\n';
    for (const auto& obs : trajectory.observations) {
        out << obs.step;
        for (Eigen::Index i = 0; i < obs.value.size(); ++i) {
            out << ',' << csv::format_double(obs.value(i));
        }
        out << '\n';
    }
    if (!out) {
        throw std::runtime_error("write to '" + path.string() + "' failed");
    }
}

Trajectory<3> read_trajectory_csv(const std::filesystem::path& states_path,
                                  const std::filesystem::path& observations_path) {
    Trajectory<3> traj;
    std::string header;
    for (const auto& row : read_csv_body(states_path, header)) {
        if (row.size() != 4) {
            throw std::runtime_error("'" + states_path.string() + "': expected 4 columns");
        }
        traj.states.emplace_back(csv::parse_double(row[1]), csv::parse_double(row[2]), csv::parse_double(row[3]));
    }
    for (const auto& row : read_csv_body(observations_path, header)) {
        if (row.size() < 2 || row.size() > 4) {
            throw std::runtime_error("'" + observations_path.string() + "': expected 2 to 4 columns");
        }
        Observation<3> obs;
        obs.step = static_cast<long>(csv::parse_int(row[0]));
        obs.value.resize(static_cast<Eigen::Index>(row.size() - 1));
        for (std::size_t i = 1; i < row.size(); ++i) {
            obs.value(static_cast<Eigen::Index>(i - 1)) = csv::parse_double(row[i]);
        }
        traj.observations.push_back(std::move(obs));
    }
    return traj;
}

} // namespace ngf
