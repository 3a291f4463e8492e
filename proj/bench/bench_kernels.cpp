// Serial reference loops vs the OpenMP kernels, at the model's shapes and a
// couple of larger ones. Thread count: OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "nodpred/kernels.hpp"
#include "nodpred/model.hpp"

namespace k = nodpred::kernels;
using nodpred::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (double& v : m.values()) v = n(rng);
    return m;
}

std::vector<double> slopes(std::size_t heads) {
    std::vector<double> s;
    for (std::size_t h = 0; h < heads; ++h) s.push_back(std::exp2(-8.0 * static_cast<double>(h + 1) / static_cast<double>(heads)));
    return s;
}

// args: rows, inner, cols
template <auto Fn>
void matmul_case(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0)), kk = static_cast<std::size_t>(state.range(1)),
               n = static_cast<std::size_t>(state.range(2));
    const Matrix a = random_matrix(m, kk, 1), b = random_matrix(kk, n, 2);
    Matrix c(m, n);
    for (auto _ : state) {
        Fn(a, b, c, false);
        benchmark::DoNotOptimize(c.values().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * kk * n));
}

void matmul_serial(benchmark::State& s) { matmul_case<&k::reference::matmul>(s); }
void matmul_parallel(benchmark::State& s) { matmul_case<&k::matmul>(s); }

#define MATMUL_SHAPES ->Args({200, 64, 128})->Args({200, 128, 64})->Args({512, 512, 512})->Unit(benchmark::kMicrosecond)
BENCHMARK(matmul_serial) MATMUL_SHAPES;
BENCHMARK(matmul_parallel) MATMUL_SHAPES;

// args: frames, dim, heads
template <auto Fwd>
void attention_case(benchmark::State& state) {
    const auto t = static_cast<std::size_t>(state.range(0)), d = static_cast<std::size_t>(state.range(1)),
               heads = static_cast<std::size_t>(state.range(2));
    const auto sl = slopes(heads);
    const k::AttentionSpec spec{heads, true, sl};
    const Matrix q = random_matrix(t, d, 3), kk = random_matrix(t, d, 4), v = random_matrix(t, d, 5);
    Matrix out(t, d);
    std::vector<double> probs;
    for (auto _ : state) {
        Fwd(q, kk, v, spec, out, &probs);
        benchmark::DoNotOptimize(out.values().data());
    }
}

template <auto Fwd, auto Bwd>
void attention_backward_case(benchmark::State& state) {
    const auto t = static_cast<std::size_t>(state.range(0)), d = static_cast<std::size_t>(state.range(1)),
               heads = static_cast<std::size_t>(state.range(2));
    const auto sl = slopes(heads);
    const k::AttentionSpec spec{heads, true, sl};
    const Matrix q = random_matrix(t, d, 3), kk = random_matrix(t, d, 4), v = random_matrix(t, d, 5),
                 dout = random_matrix(t, d, 6);
    Matrix out(t, d), dq(t, d), dk(t, d), dv(t, d);
    std::vector<double> probs;
    Fwd(q, kk, v, spec, out, &probs);
    for (auto _ : state) {
        Bwd(q, kk, v, spec, probs, dout, dq, dk, dv);
        benchmark::DoNotOptimize(dq.values().data());
    }
}

void attention_serial(benchmark::State& s) { attention_case<&k::reference::attention_forward>(s); }
void attention_parallel(benchmark::State& s) { attention_case<&k::attention_forward>(s); }
void attention_backward_serial(benchmark::State& s) {
    attention_backward_case<&k::reference::attention_forward, &k::reference::attention_backward>(s);
}
void attention_backward_parallel(benchmark::State& s) {
    attention_backward_case<&k::attention_forward, &k::attention_backward>(s);
}

#define ATTENTION_SHAPES ->Args({200, 64, 4})->Args({1000, 64, 4})->Unit(benchmark::kMicrosecond)
BENCHMARK(attention_serial) ATTENTION_SHAPES;
BENCHMARK(attention_parallel) ATTENTION_SHAPES;
BENCHMARK(attention_backward_serial) ATTENTION_SHAPES;
BENCHMARK(attention_backward_parallel) ATTENTION_SHAPES;

// one streaming tick of the desk-scale model (10 Hz, 20 s window)
void model_tick(benchmark::State& state) {
    nodpred::ModelConfig cfg;
    const nodpred::Model model(cfg);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    std::vector<double> user(cfg.window_samples()), system(cfg.window_samples());
    for (double& x : user) x = u(rng);
    for (double& x : system) x = u(rng);
    for (auto _ : state) benchmark::DoNotOptimize(model.predict_window(user, system));
}
BENCHMARK(model_tick)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
