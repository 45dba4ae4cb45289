// Serial reference path against the OpenMP path for the per-class kernels.
// The range argument is p; every case uses k=5 and N=10 classes.
//
//   MODCONN_THREADS=4 ./bench_kernels --benchmark_filter=grad_W

#include "modconn/estimation.hpp"
#include "modconn/model.hpp"
#include "modconn/simulation.hpp"
#include "modconn/threads.hpp"

#include <benchmark/benchmark.h>
#include <map>
#include <omp.h>

using namespace modconn;

namespace {

constexpr Eigen::Index kLatents = 5;
constexpr std::size_t kClasses = 10;

struct Problem {
    ModelParams params;
    SampleMoments moments;
    MultiClassDataset data;
};

const Problem& problem(Eigen::Index p) {
    static std::map<Eigen::Index, Problem> cache;
    auto it = cache.find(p);
    if (it != cache.end()) return it->second;
    auto [ds, truth] = gen_gaussian_dataset(p, kLatents, kClasses, 2 * p, 17);
    Problem pr;
    pr.params.W = truth.W;
    pr.params.G = truth.G;
    pr.params.v = truth.v;
    pr.moments = compute_moments(ds);
    pr.data = std::move(ds);
    return cache.emplace(p, std::move(pr)).first->second;
}

Exec exec_of(const benchmark::State& state) { return state.range(1) ? Exec::parallel : Exec::serial; }

void label(benchmark::State& state) {
    state.SetLabel(state.range(1) ? "openmp x" + std::to_string(omp_get_max_threads()) : "serial");
}

void BM_objective(benchmark::State& state) {
    const Problem& pr = problem(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(score_matching_objective(pr.params, pr.moments, exec_of(state)));
    label(state);
}

void BM_grad_W(benchmark::State& state) {
    const Problem& pr = problem(state.range(0));
    const Exec exec = exec_of(state);
    for (auto _ : state) {
        const Workspace ws = make_workspace(pr.params, pr.moments, exec);
        benchmark::DoNotOptimize(grad_W(pr.params, pr.moments, ws, exec));
    }
    label(state);
}

void BM_ml_grad_W(benchmark::State& state) {
    const Problem& pr = problem(state.range(0));
    const Exec exec = exec_of(state);
    for (auto _ : state) {
        Workspace ws = make_workspace(pr.params, pr.moments, exec);
        add_ml_terms(ws, pr.params, pr.moments, exec);
        benchmark::DoNotOptimize(ml_grad_W(pr.params, ws, exec));
    }
    label(state);
}

// The fit always takes the OpenMP path; the serial case pins it to one thread.
void BM_fit(benchmark::State& state) {
    const Problem& pr = problem(state.range(0));
    FitConfig cfg;
    cfg.k = kLatents;
    cfg.outer_max = 2;
    cfg.inner_max = 20;
    const int threads = omp_get_max_threads();
    if (!state.range(1)) omp_set_num_threads(1);
    for (auto _ : state) benchmark::DoNotOptimize(fit_moments(pr.moments, cfg, pr.params.W));
    omp_set_num_threads(threads);
    label(state);
}

void grid(benchmark::internal::Benchmark* b) {
    for (const long p : {50, 100, 200, 400})
        for (const long par : {0, 1}) b->Args({p, par});
    b->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_objective)->Apply(grid);
BENCHMARK(BM_grad_W)->Apply(grid);
BENCHMARK(BM_ml_grad_W)->Apply(grid);
BENCHMARK(BM_fit)->Apply(grid);

int main(int argc, char** argv) {
    configure_threads();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
