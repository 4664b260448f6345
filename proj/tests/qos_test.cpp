#include "dai/qos.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "dai/streamgen.hpp"

using namespace dai;
using namespace dai::qos;

namespace {

decipher::FieldMap truth_map(const gen::GroundTruth& truth) {
  decipher::FieldMap map;
  for (int p : truth.layout.constant_positions()) {
    map.constant_positions.insert(p);
  }
  map.pt_position = truth.layout.pt_pos;
  map.video_pt_cipher = truth.video_pt_cipher;
  map.seq_high_position = truth.layout.seq_high_pos;
  map.seq_low_position = truth.layout.seq_low_pos();
  map.seq_width = 2;
  map.seq_key = truth.seq_key;
  return map;
}

std::pair<Capture, gen::GroundTruth> media_flow(const gen::GenConfig& cfg) {
  auto [capture, truth] = gen::generate_stream(cfg);
  auto flows = split_flows(capture);
  return {std::move(flows.at(truth.media_flow)), std::move(truth)};
}

gen::GenConfig base_config(int duration_s, double loss, std::uint64_t seed) {
  gen::GenConfig cfg;
  cfg.duration_s = duration_s;
  cfg.seed = seed;
  cfg.condition = gen::NetworkCondition{100000, loss, 0, 0};
  return cfg;
}

}  // namespace

TEST_CASE("loss_rate from sequence gaps") {
  std::vector<std::uint16_t> seqs;
  for (int s = 1; s <= 100; ++s) {
    if (s < 7 || s > 11) {
      seqs.push_back(static_cast<std::uint16_t>(s));
    }
  }
  CHECK(loss_rate(seqs) == doctest::Approx(0.05));
}

TEST_CASE("loss_rate unwraps the 16-bit counter") {
  std::vector<std::uint16_t> seqs;
  for (int s = 65530; s < 65536 + 5; ++s) {
    seqs.push_back(static_cast<std::uint16_t>(s & 0xffff));
  }
  CHECK(loss_rate(seqs) == doctest::Approx(0.0));
}

TEST_CASE("loss_rate counts duplicates once") {
  std::vector<std::uint16_t> seqs;
  for (int s = 1; s <= 100; ++s) {
    seqs.push_back(static_cast<std::uint16_t>(s));
    if (s == 50) {
      seqs.push_back(50);
    }
  }
  CHECK(loss_rate(seqs) == doctest::Approx(0.0));
  CHECK(loss_rate(std::vector<std::uint16_t>{42}) == 0.0);
}

TEST_CASE("interarrival_stats matches hand computations") {
  {
    const std::vector<std::int64_t> ts = {0, 10'000, 20'000};
    const auto [mean, sd] = interarrival_stats(ts);
    CHECK(mean == doctest::Approx(10.0));
    CHECK(sd == doctest::Approx(0.0));
  }
  {
    // Gaps 10 and 20 ms: mean 15, population std sqrt(((10-15)^2+(20-15)^2)/2).
    const std::vector<std::int64_t> ts = {0, 10'000, 30'000};
    const auto [mean, sd] = interarrival_stats(ts);
    CHECK(mean == doctest::Approx(15.0));
    CHECK(sd == doctest::Approx(5.0));
  }
  {
    const auto [mean, sd] = interarrival_stats(std::vector<std::int64_t>{5});
    CHECK(mean == 0.0);
    CHECK(sd == 0.0);
  }
}

TEST_CASE("a 10 second flow yields 5 windows with faithful rates") {
  const auto [flow, truth] = media_flow(base_config(10, 0.0, 61));
  const auto windows = extract_windows(flow, truth_map(truth));
  REQUIRE(windows.size() == 5);

  // Ground-truth per-window byte sums from the per-packet trace.
  for (const auto& w : windows) {
    std::uint64_t video_bytes = 0;
    std::uint64_t udp_bytes = 0;
    REQUIRE(truth.packets.size() == flow.size());
    for (std::size_t i = 0; i < truth.packets.size(); ++i) {
      const auto& p = truth.packets[i];
      if (p.ts_us < w.t_start_us || p.ts_us >= w.t_start_us + w.duration_us) {
        continue;
      }
      udp_bytes += flow.records[i].payload.size();
      if (p.cls == gen::PacketClass::Video) {
        video_bytes += flow.records[i].payload.size();
      }
    }
    const double udp_kbps = static_cast<double>(udp_bytes) * 8.0 / 2000.0;
    const double video_kbps = static_cast<double>(video_bytes) * 8.0 / 2000.0;
    CHECK(w.udp_rate_kbps == doctest::Approx(udp_kbps));
    CHECK(w.video_rate_kbps == doctest::Approx(video_kbps).epsilon(0.001));
    CHECK_FALSE(w.sparse);
    CHECK(w.loss_rate == doctest::Approx(0.0));
  }
}

TEST_CASE("a single 1000-byte packet reports 4 kbps and sparse") {
  Capture flow;
  UdpRecord rec;
  rec.ts_us = 0;
  rec.flow = FlowKey{1, 2, 3, 4};
  rec.payload.assign(1000, 0x00);
  rec.payload[0] = 65;
  rec.payload[1] = 0x99;
  flow.records.push_back(std::move(rec));

  decipher::FieldMap map;
  map.constant_positions = {1};
  map.pt_position = 2;
  map.video_pt_cipher = 0x99;
  map.seq_high_position = 4;
  map.seq_low_position = 5;
  map.seq_width = 2;
  map.seq_key = 0;

  const auto windows = extract_windows(flow, map);
  REQUIRE(windows.size() == 1);
  CHECK(windows[0].udp_rate_kbps == doctest::Approx(4.0));
  CHECK(windows[0].sparse);
  CHECK(windows[0].loss_rate == 0.0);
  CHECK(windows[0].packet_count == 1);
}

TEST_CASE("a flow without FEC packets reports zero fec rate") {
  const auto [flow, truth] = media_flow(base_config(6, 0.0, 62));
  Capture video_only;
  REQUIRE(truth.packets.size() == flow.size());
  for (std::size_t i = 0; i < flow.size(); ++i) {
    if (truth.packets[i].cls == gen::PacketClass::Video) {
      video_only.records.push_back(flow.records[i]);
    }
  }
  const auto windows = extract_windows(video_only, truth_map(truth));
  REQUIRE(!windows.empty());
  for (const auto& w : windows) {
    CHECK(w.fec_rate_kbps == 0.0);
  }
}

TEST_CASE("empty flows produce no windows") {
  decipher::FieldMap map;
  map.pt_position = 2;
  map.seq_high_position = 4;
  map.seq_low_position = 5;
  CHECK(extract_windows(Capture{}, map).empty());
}

TEST_CASE("a foreign field map is rejected as stale") {
  const auto [flow_a, truth_a] = media_flow(base_config(8, 0.0, 63));
  const auto [flow_b, truth_b] = media_flow(base_config(8, 0.0, 64));
  REQUIRE(truth_a.seq_key != truth_b.seq_key);
  CHECK_THROWS_AS(extract_windows(flow_a, truth_map(truth_b)),
                  StaleFieldMapError);
}

TEST_CASE("constant delay shifts arrivals but not the statistics") {
  auto cfg0 = base_config(8, 0.02, 65);
  auto cfg100 = cfg0;
  cfg100.condition.delay_ms = 100;
  const auto [flow0, truth0] = media_flow(cfg0);
  const auto [flow100, truth100] = media_flow(cfg100);
  const auto w0 = extract_windows(flow0, truth_map(truth0));
  const auto w100 = extract_windows(flow100, truth_map(truth100));
  REQUIRE(w0.size() == w100.size());
  for (std::size_t i = 0; i < w0.size(); ++i) {
    CHECK(w100[i].t_start_us == w0[i].t_start_us + 100'000);
    CHECK(w100[i].iat_mean_ms == doctest::Approx(w0[i].iat_mean_ms));
    CHECK(w100[i].iat_std_ms == doctest::Approx(w0[i].iat_std_ms));
    CHECK(w100[i].udp_rate_kbps == doctest::Approx(w0[i].udp_rate_kbps));
    CHECK(w100[i].loss_rate == doctest::Approx(w0[i].loss_rate));
  }
}

TEST_CASE("window rates are additive across adjacent windows") {
  const auto [flow, truth] = media_flow(base_config(16, 0.0, 66));
  const auto map = truth_map(truth);
  const auto w2 = extract_windows(flow, map, 2'000'000);
  const auto w4 = extract_windows(flow, map, 4'000'000);
  REQUIRE(w2.size() >= 2 * w4.size());
  for (std::size_t i = 0; i < w4.size(); ++i) {
    const double merged =
        (w2[2 * i].udp_rate_kbps + w2[2 * i + 1].udp_rate_kbps) / 2.0;
    CHECK(w4[i].udp_rate_kbps == doctest::Approx(merged));
  }
}

TEST_CASE("the zero-loss video share matches the base FEC ratio") {
  const auto [flow, truth] = media_flow(base_config(20, 0.0, 67));
  const auto windows = extract_windows(flow, truth_map(truth));
  double video = 0.0, fec = 0.0;
  for (const auto& w : windows) {
    video += w.video_rate_kbps;
    fec += w.fec_rate_kbps;
  }
  const double share = video / (video + fec);
  const double expected = 1.0 / 1.08;
  CHECK(std::abs(share - expected) / expected < 0.05);
}

TEST_CASE("the modal-frequency estimator tracks the exact split") {
  const auto [flow, truth] = media_flow(base_config(10, 0.0, 68));
  const auto windows = extract_windows(flow, truth_map(truth));
  for (const auto& w : windows) {
    if (w.sparse) {
      continue;
    }
    // The paper's estimator is packet-proportion based, so it sits near
    // the exact byte split but not on it.
    CHECK(w.modal_video_kbps > 0.5 * w.video_rate_kbps);
    CHECK(w.modal_video_kbps < 1.5 * w.video_rate_kbps);
  }
}

TEST_CASE("QoS CSV round trips and rejects unknown headers") {
  const auto [flow, truth] = media_flow(base_config(6, 0.03, 69));
  const auto windows = extract_windows(flow, truth_map(truth));
  const auto path = std::filesystem::temp_directory_path() / "dai_qos.csv";
  write_qos_csv(windows, path);
  const auto back = read_qos_csv(path);
  REQUIRE(back.size() == windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    CHECK(back[i].t_start_us == windows[i].t_start_us);
    CHECK(back[i].udp_rate_kbps ==
          doctest::Approx(windows[i].udp_rate_kbps).epsilon(1e-6));
    CHECK(back[i].packet_count == windows[i].packet_count);
    CHECK(back[i].sparse == windows[i].sparse);
  }

  std::ofstream bad(path, std::ios::trunc);
  bad << "wrong,header\n1,2\n";
  bad.close();
  CHECK_THROWS_AS(read_qos_csv(path), ShapeError);
  std::filesystem::remove(path);
}
