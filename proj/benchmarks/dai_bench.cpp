#include <benchmark/benchmark.h>

#include "dai/decipher.hpp"
#include "dai/qoe.hpp"
#include "dai/qos.hpp"
#include "dai/streamgen.hpp"
#include "dai/traffic.hpp"

namespace {

dai::gen::GenConfig bench_config(int duration_s) {
  dai::gen::GenConfig cfg;
  cfg.duration_s = duration_s;
  cfg.seed = 1;
  cfg.condition = dai::gen::NetworkCondition{100000, 0.02, 0, 0};
  return cfg;
}

std::pair<dai::Capture, dai::gen::GroundTruth> bench_flow(int duration_s) {
  auto [capture, truth] = dai::gen::generate_stream(bench_config(duration_s));
  auto flows = dai::split_flows(capture);
  return {std::move(flows.at(truth.media_flow)), std::move(truth)};
}

void BM_GenerateStream(benchmark::State& state) {
  const auto cfg = bench_config(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto result = dai::gen::generate_stream(cfg);
    benchmark::DoNotOptimize(result.first.records.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateStream)->Arg(10)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_ByteFrequency(benchmark::State& state) {
  const auto [flow, truth] = bench_flow(30);
  for (auto _ : state) {
    auto profile = dai::decipher::byte_frequency(flow, 16);
    benchmark::DoNotOptimize(profile.positions.data());
  }
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(flow.size()));
}
BENCHMARK(BM_ByteFrequency);

void BM_LocateSeq(benchmark::State& state) {
  const auto [flow, truth] = bench_flow(30);
  auto [video, rest] = dai::decipher::classify_packets(
      flow, truth.layout.pt_pos, truth.video_pt_cipher);
  for (auto _ : state) {
    auto loc = dai::decipher::locate_seq(video, 16);
    benchmark::DoNotOptimize(loc.low_position);
  }
}
BENCHMARK(BM_LocateSeq)->Unit(benchmark::kMillisecond);

void BM_RecoverSeqKey(benchmark::State& state) {
  const auto [flow, truth] = bench_flow(static_cast<int>(state.range(0)));
  auto [video, rest] = dai::decipher::classify_packets(
      flow, truth.layout.pt_pos, truth.video_pt_cipher);
  for (auto _ : state) {
    auto key = dai::decipher::recover_seq_key(video,
                                              truth.layout.seq_low_pos());
    benchmark::DoNotOptimize(key.key);
  }
}
BENCHMARK(BM_RecoverSeqKey)->Arg(10)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_ExtractWindows(benchmark::State& state) {
  const auto [flow, truth] = bench_flow(60);
  dai::decipher::FieldMap map;
  for (int p : truth.layout.constant_positions()) {
    map.constant_positions.insert(p);
  }
  map.pt_position = truth.layout.pt_pos;
  map.video_pt_cipher = truth.video_pt_cipher;
  map.seq_high_position = truth.layout.seq_high_pos;
  map.seq_low_position = truth.layout.seq_low_pos();
  map.seq_key = truth.seq_key;
  for (auto _ : state) {
    auto windows = dai::qos::extract_windows(flow, map);
    benchmark::DoNotOptimize(windows.data());
  }
}
BENCHMARK(BM_ExtractWindows)->Unit(benchmark::kMillisecond);

void BM_TrainForest(benchmark::State& state) {
  const auto [flow, truth] = bench_flow(60);
  dai::decipher::FieldMap map;
  for (int p : truth.layout.constant_positions()) {
    map.constant_positions.insert(p);
  }
  map.pt_position = truth.layout.pt_pos;
  map.video_pt_cipher = truth.video_pt_cipher;
  map.seq_high_position = truth.layout.seq_high_pos;
  map.seq_low_position = truth.layout.seq_low_pos();
  map.seq_key = truth.seq_key;
  const auto windows = dai::qos::extract_windows(flow, map);
  const auto dataset = dai::qoe::build_dataset(windows, truth);
  for (auto _ : state) {
    auto model =
        dai::qoe::train_forest(dataset, dai::qoe::QoeTarget::Bitrate, {}, 3);
    benchmark::DoNotOptimize(model.trees.data());
  }
}
BENCHMARK(BM_TrainForest)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
