#include <benchmark/benchmark.h>

#include "decoupler/attack.hpp"
#include "decoupler/model.hpp"
#include "decoupler/sample.hpp"

namespace {

using namespace decoupler;

DatasetManifest bench_manifest() {
    DatasetManifest man;
    man.task_kind = TaskKind::AndCoupling;
    man.n_samples = 40;
    man.seed = 7;
    return man;
}

FusionModel bench_model(Architecture a) {
    return FusionModel::init_random(a, dims_from_manifest(bench_manifest(), 16), 7);
}

FusionModel trained_model(Architecture a) {
    const auto data = generate_dataset(bench_manifest());
    const TrainConfig cfg{0.1, 500, 40, 0};
    return train(bench_model(a), data, cfg).model;
}

void BM_EmbedProduct(benchmark::State& state) {
    const FusionModel m = bench_model(Architecture::ProductFusion);
    const MaterializedInput in = generate_dataset(bench_manifest())[0].materialize();
    for (auto _ : state) benchmark::DoNotOptimize(m.embed(in));
}
BENCHMARK(BM_EmbedProduct);

void BM_EmbedSum(benchmark::State& state) {
    const FusionModel m = bench_model(Architecture::SumFusion);
    const MaterializedInput in = generate_dataset(bench_manifest())[0].materialize();
    for (auto _ : state) benchmark::DoNotOptimize(m.embed(in));
}
BENCHMARK(BM_EmbedSum);

void BM_EmbedAttention(benchmark::State& state) {
    const FusionModel m = bench_model(Architecture::AttentionFusion);
    const MaterializedInput in = generate_dataset(bench_manifest())[0].materialize();
    for (auto _ : state) benchmark::DoNotOptimize(m.embed(in));
}
BENCHMARK(BM_EmbedAttention);

void BM_LossGradientsProduct(benchmark::State& state) {
    const FusionModel m = bench_model(Architecture::ProductFusion);
    const auto data = generate_dataset(bench_manifest());
    const MaterializedInput in = data[0].materialize();
    for (auto _ : state) benchmark::DoNotOptimize(loss_gradients(m, in, data[0].label));
}
BENCHMARK(BM_LossGradientsProduct);

void BM_LossGradientsAttention(benchmark::State& state) {
    const FusionModel m = bench_model(Architecture::AttentionFusion);
    const auto data = generate_dataset(bench_manifest());
    const MaterializedInput in = data[0].materialize();
    for (auto _ : state) benchmark::DoNotOptimize(loss_gradients(m, in, data[0].label));
}
BENCHMARK(BM_LossGradientsAttention);

void BM_SalientSetGeneric(benchmark::State& state) {
    const FusionModel m = bench_model(Architecture::AttentionFusion);
    const auto data = generate_dataset(bench_manifest());
    for (auto _ : state) benchmark::DoNotOptimize(salient_set(m, data[0]));
}
BENCHMARK(BM_SalientSetGeneric);

void BM_SalientSetFastPath(benchmark::State& state) {
    const FusionModel m = bench_model(Architecture::AttentionFusion);
    const auto data = generate_dataset(bench_manifest());
    SalienceConfig cfg;
    cfg.transformer_fast_path = true;
    for (auto _ : state) benchmark::DoNotOptimize(salient_set(m, data[0], cfg));
}
BENCHMARK(BM_SalientSetFastPath);

void BM_DecouplingAttack(benchmark::State& state) {
    const FusionModel m = trained_model(Architecture::ProductFusion);
    const auto data = generate_dataset(bench_manifest());
    const MultimodalSample* target = nullptr;
    for (const MultimodalSample& s : data) {
        if (s.label == 1 && m.predict(s) == 1) {
            target = &s;
            break;
        }
    }
    if (target == nullptr) {
        state.SkipWithError("no attackable sample at this seed");
        return;
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(decoupling_attack(m, *target, TerminationSpec{}));
    }
}
BENCHMARK(BM_DecouplingAttack);

void BM_BruteForceOracle(benchmark::State& state) {
    // label-0 sample on an AND model: full enumeration of 2^15 - 1 subsets
    const FusionModel m = trained_model(Architecture::ProductFusion);
    const auto data = generate_dataset(bench_manifest());
    const MultimodalSample* target = nullptr;
    for (const MultimodalSample& s : data) {
        if (s.label == 0 && m.predict(s) == 0) {
            target = &s;
            break;
        }
    }
    if (target == nullptr) {
        state.SkipWithError("no certifiable sample at this seed");
        return;
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(brute_force_oracle(m, *target, TerminationSpec{}));
    }
}
BENCHMARK(BM_BruteForceOracle);

void BM_TrainEpoch(benchmark::State& state) {
    const auto data = generate_dataset(bench_manifest());
    const FusionModel init = bench_model(Architecture::ProductFusion);
    const TrainConfig cfg{0.1, 1, 40, 0};
    for (auto _ : state) benchmark::DoNotOptimize(train(init, data, cfg));
}
BENCHMARK(BM_TrainEpoch);

}  // namespace

BENCHMARK_MAIN();
