#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "dai/decipher.hpp"
#include "dai/errors.hpp"
#include "dai/traffic.hpp"

namespace dai::qos {

// One 2-second (by default) QoS feature window.
struct QosWindow {
  std::int64_t t_start_us = 0;
  std::int64_t duration_us = 2'000'000;
  double udp_rate_kbps = 0.0;
  double video_rate_kbps = 0.0;
  double fec_rate_kbps = 0.0;
  double loss_rate = 0.0;
  double iat_mean_ms = 0.0;
  double iat_std_ms = 0.0;
  std::uint64_t packet_count = 0;
  bool sparse = false;  // fewer than 2 packets or than 2 video seqs

  // The paper-style estimator (modal PT frequency times UDP rate), kept as
  // a diagnostic next to the exact per-packet split.
  double modal_video_kbps = 0.0;
};

// Consecutive non-overlapping windows anchored at the first packet.
// Rates are byte-weighted per packet class; loss comes from the decrypted
// video sequence numbers. The trailing window is dropped unless packets
// span at least 90% of it.
std::vector<QosWindow> extract_windows(const Capture& flow,
                                       const decipher::FieldMap& map,
                                       std::int64_t window_us = 2'000'000);

// Loss over a run of decrypted 16-bit sequence numbers in arrival order:
// unwrap mod 2^16 (a backward jump greater than 32768 is a wrap), expected
// span versus distinct received. Returns 0 for fewer than 2 seqs.
double loss_rate(std::span<const std::uint16_t> seqs);

// Mean and population standard deviation of consecutive arrival gaps, in
// milliseconds. Returns (0, 0) for fewer than 2 packets.
std::pair<double, double> interarrival_stats(std::span<const std::int64_t> ts_us);

// Interchange CSV, one row per window:
// t_start_us,duration_us,udp_kbps,video_kbps,fec_kbps,loss,iat_mean_ms,iat_std_ms,pkts,sparse
void write_qos_csv(std::span<const QosWindow> windows,
                   const std::filesystem::path& path);
std::vector<QosWindow> read_qos_csv(const std::filesystem::path& path);

}  // namespace dai::qos
