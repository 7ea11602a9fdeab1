// Serial reference loops against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>

#include "ngf/baselines.hpp"
#include "ngf/experiments.hpp"
#include "ngf/lorenz63.hpp"
#include "ngf/nested_filter.hpp"

using namespace ngf;

namespace {

struct Fixture {
    Lorenz63Config cfg;
    Lorenz63Model model = make_lorenz63_model(cfg);
    GaussianBelief<3> prior_x{Eigen::Vector3d(-6.0, -5.5, -24.5), Eigen::Matrix3d::Identity()};
    GaussianBelief<3> prior_theta{Eigen::Vector3d(12.0, 27.5, 3.0), Eigen::Matrix3d::Identity()};
    Trajectory<3> truth = simulate_ground_truth(cfg, Eigen::Vector3d(10.0, 28.0, 8.0 / 3.0), prior_x, 5000, 2);
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

Execution mode(const benchmark::State& state) {
    return state.range(0) == 0 ? Execution::serial : Execution::parallel;
}

// Replay of the full history for every bank member: the restart path.
void BM_AdvanceBankReplay(benchmark::State& state) {
    const Fixture& f = fixture();
    NestedFilterConfig cfg;
    cfg.recursive = false;
    const auto s0 = initialize<3, 3>(f.prior_theta, f.prior_x, cfg);
    const std::span<const Observation<3>> obs(f.truth.observations);
    for (auto _ : state) {
        benchmark::DoNotOptimize(advance_bank(s0, obs, f.model, f.prior_x, cfg, mode(state)));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(s0.points.size() * obs.size()));
}
BENCHMARK(BM_AdvanceBankReplay)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_OuterStepRecursive(benchmark::State& state) {
    const Fixture& f = fixture();
    NestedFilterConfig cfg;
    const std::span<const Observation<3>> obs(f.truth.observations);
    for (auto _ : state) {
        auto s = initialize<3, 3>(f.prior_theta, f.prior_x, cfg);
        for (std::size_t k = 0; k < obs.size(); ++k) {
            s = outer_step(s, obs.first(k + 1), f.model, f.prior_x, cfg, mode(state));
        }
        benchmark::DoNotOptimize(s.param_belief.mean);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(obs.size()));
}
BENCHMARK(BM_OuterStepRecursive)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_SmcEkfStep(benchmark::State& state) {
    const Fixture& f = fixture();
    std::mt19937_64 rng(3);
    auto cloud = init_particle_cloud(f.prior_theta, f.prior_x, 120, rng);
    const SmcConfig<3> cfg{f.cfg.m_o, default_smc_jitter(f.prior_theta, 120), 0.5};
    std::size_t k = 0;
    for (auto _ : state) {
        cloud = smc_ekf_step(cloud, f.truth.observations[k % f.truth.observations.size()].value, f.model, cfg, rng,
                             mode(state));
        ++k;
    }
    state.SetItemsProcessed(state.iterations() * 120);
}
BENCHMARK(BM_SmcEkfStep)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMicrosecond);

void BM_BatchOfRuns(benchmark::State& state) {
    RunConfig cfg;
    cfg.t_end = 1.0;
    cfg.n_runs = 8;
    for (auto _ : state) {
        benchmark::DoNotOptimize(run_experiment(cfg, mode(state)).mean_nmse_theta);
    }
    state.SetItemsProcessed(state.iterations() * cfg.n_runs);
}
BENCHMARK(BM_BatchOfRuns)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
