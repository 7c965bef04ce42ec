#include <benchmark/benchmark.h>

#include <random>

#include "sparsefront/attacks.hpp"
#include "sparsefront/frontend.hpp"
#include "sparsefront/network.hpp"
#include "sparsefront/wavelet.hpp"

using namespace sparsefront;

namespace {

Signal random_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Signal x(784);
  for (auto& v : x) v = u(rng);
  return x;
}

WaveletFamily family_arg(const benchmark::State& state) { return static_cast<WaveletFamily>(state.range(0)); }

Network cnn() {
  Network net(NetworkArch::cnn4());
  net.initialize(1);
  return net;
}

void BM_WaveletForward(benchmark::State& state) {
  const WaveletBasis b = make_basis(family_arg(state), 2, SignalShape::grid(28, 28));
  const Signal x = random_image(1);
  for (auto _ : state) benchmark::DoNotOptimize(b.forward(x));
}

void BM_WaveletInverse(benchmark::State& state) {
  const WaveletBasis b = make_basis(family_arg(state), 2, SignalShape::grid(28, 28));
  const Signal c = b.forward(random_image(2));
  for (auto _ : state) benchmark::DoNotOptimize(b.inverse(c));
}

void BM_Sparsify(benchmark::State& state) {
  const FrontEndConfig cfg =
      FrontEndConfig::from_rho(make_basis(family_arg(state), 2, SignalShape::grid(28, 28)), 0.035);
  const Signal x = random_image(3);
  for (auto _ : state) benchmark::DoNotOptimize(sparsify(cfg, x));
}

void BM_CnnForward(benchmark::State& state) {
  const Network net = cnn();
  Eigen::MatrixXd batch(784, state.range(0));
  for (Eigen::Index i = 0; i < batch.cols(); ++i) batch.col(i) = random_image(10 + static_cast<std::uint64_t>(i));
  for (auto _ : state) benchmark::DoNotOptimize(net.logits(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_CnnInputGradient(benchmark::State& state) {
  const Network net = cnn();
  const FrontEndConfig fe =
      FrontEndConfig::from_rho(make_basis(WaveletFamily::coif1, 2, SignalShape::grid(28, 28)), 0.035);
  GradientSpec spec;
  spec.mode = static_cast<GradMode>(state.range(0));
  const Signal x = random_image(4);
  for (auto _ : state)
    benchmark::DoNotOptimize(grad_input(net, &fe, x, {3, -1}, LossKind::cross_entropy, spec));
}

void BM_LocalLinear(benchmark::State& state) {
  const Network net = cnn();
  const Signal x = random_image(5);
  for (auto _ : state) benchmark::DoNotOptimize(local_linear(net, x));
}

void BM_Fgsm(benchmark::State& state) {
  const Network net = cnn();
  AttackConfig cfg;
  const Signal x = random_image(6);
  for (auto _ : state) benchmark::DoNotOptimize(fgsm(net, nullptr, x, 3, cfg));
}

}  // namespace

BENCHMARK(BM_WaveletForward)->DenseRange(0, 2)->ArgName("family");
BENCHMARK(BM_WaveletInverse)->DenseRange(0, 2)->ArgName("family");
BENCHMARK(BM_Sparsify)->DenseRange(0, 2)->ArgName("family");
BENCHMARK(BM_CnnForward)->Arg(1)->Arg(64)->ArgName("batch");
BENCHMARK(BM_CnnInputGradient)->DenseRange(0, 2)->ArgName("grad_mode");
BENCHMARK(BM_LocalLinear)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fgsm);
BENCHMARK_MAIN();
