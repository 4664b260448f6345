#include "dai/qos.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dai::qos {

namespace {

constexpr double kTrailingCoverage = 0.9;
constexpr double kStaleDeltaFraction = 0.5;

}  // namespace

double loss_rate(std::span<const std::uint16_t> seqs) {
  if (seqs.size() < 2) {
    return 0.0;
  }
  std::vector<std::int64_t> unwrapped;
  unwrapped.reserve(seqs.size());
  std::int64_t current = seqs[0];
  unwrapped.push_back(current);
  for (std::size_t i = 1; i < seqs.size(); ++i) {
    std::int64_t diff = static_cast<std::int64_t>(seqs[i]) -
                        static_cast<std::int64_t>(seqs[i - 1]);
    if (diff < -32768) {
      diff += 65536;
    }
    current += diff;
    unwrapped.push_back(current);
  }
  const std::int64_t expected = unwrapped.back() - unwrapped.front() + 1;
  if (expected <= 1) {
    return 0.0;
  }
  std::sort(unwrapped.begin(), unwrapped.end());
  const std::int64_t distinct = static_cast<std::int64_t>(
      std::unique(unwrapped.begin(), unwrapped.end()) - unwrapped.begin());
  const double loss =
      1.0 - static_cast<double>(distinct) / static_cast<double>(expected);
  return std::clamp(loss, 0.0, 1.0);
}

std::pair<double, double> interarrival_stats(
    std::span<const std::int64_t> ts_us) {
  if (ts_us.size() < 2) {
    return {0.0, 0.0};
  }
  const std::size_t n = ts_us.size() - 1;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean += static_cast<double>(ts_us[i + 1] - ts_us[i]);
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(ts_us[i + 1] - ts_us[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  return {mean / 1000.0, std::sqrt(var) / 1000.0};
}

std::vector<QosWindow> extract_windows(const Capture& flow,
                                       const decipher::FieldMap& map,
                                       std::int64_t window_us) {
  if (flow.empty()) {
    return {};
  }
  if (window_us <= 0) {
    throw UsageError("extract_windows: window_us must be positive");
  }
  if (map.pt_position < 1 || map.seq_low_position < 1) {
    throw UsageError("extract_windows: incomplete field map");
  }

  const auto pt_idx = static_cast<std::size_t>(map.pt_position - 1);
  const auto classes = decipher::classify_media(flow, map);
  Capture video;
  video.epoch_us = flow.epoch_us;
  for (std::size_t i = 0; i < flow.records.size(); ++i) {
    if (classes[i] == decipher::MediaClass::Video) {
      video.records.push_back(flow.records[i]);
    }
  }

  // A field map from a different stream misclassifies or decrypts to
  // junk; catch both before emitting windows full of nonsense figures.
  if (flow.size() >= 100 && video.size() * 20 < flow.size()) {
    throw StaleFieldMapError(
        "extract_windows: field map does not fit this flow (only " +
        std::to_string(video.size()) + " of " + std::to_string(flow.size()) +
        " packets classify as video)");
  }
  if (video.size() >= 100) {
    const auto seqs = decipher::decrypt_seqs(video, map);
    std::uint64_t ones = 0;
    for (std::size_t i = 0; i + 1 < seqs.size(); ++i) {
      ones += static_cast<std::uint64_t>(
          static_cast<std::uint16_t>(seqs[i + 1] - seqs[i]) == 1);
    }
    const double frac =
        seqs.size() > 1
            ? static_cast<double>(ones) / static_cast<double>(seqs.size() - 1)
            : 0.0;
    if (frac < kStaleDeltaFraction) {
      throw StaleFieldMapError(
          "extract_windows: field map does not decrypt this flow "
          "(adjacent delta-1 fraction " +
          std::to_string(frac) + ")");
    }
  }

  const std::int64_t t0 = flow.records.front().ts_us;
  const std::int64_t t_last = flow.records.back().ts_us;
  std::vector<QosWindow> windows;

  std::size_t i = 0;
  for (std::int64_t start = t0; start <= t_last; start += window_us) {
    const std::int64_t end = start + window_us;
    QosWindow w;
    w.t_start_us = start;
    w.duration_us = window_us;

    std::uint64_t udp_bytes = 0, video_bytes = 0, fec_bytes = 0;
    std::uint64_t pt_covered = 0, pt_modal_hits = 0;
    std::array<std::uint32_t, 256> pt_counts{};
    std::vector<std::int64_t> arrivals;
    std::vector<std::uint16_t> video_seqs;
    Capture video_window;

    for (; i < flow.records.size() && flow.records[i].ts_us < end; ++i) {
      const auto& rec = flow.records[i];
      udp_bytes += rec.payload.size();
      arrivals.push_back(rec.ts_us);
      if (classes[i] == decipher::MediaClass::Video) {
        video_bytes += rec.payload.size();
        video_window.records.push_back(rec);
      } else if (classes[i] == decipher::MediaClass::Fec) {
        fec_bytes += rec.payload.size();
      }
      if (rec.payload.size() > pt_idx) {
        ++pt_covered;
        ++pt_counts[rec.payload[pt_idx]];
      }
    }
    if (pt_covered > 0) {
      pt_modal_hits = *std::max_element(pt_counts.begin(), pt_counts.end());
    }

    const double window_ms = static_cast<double>(window_us) / 1000.0;
    w.packet_count = arrivals.size();
    w.udp_rate_kbps = static_cast<double>(udp_bytes) * 8.0 / window_ms;
    w.video_rate_kbps = static_cast<double>(video_bytes) * 8.0 / window_ms;
    w.fec_rate_kbps = static_cast<double>(fec_bytes) * 8.0 / window_ms;
    w.modal_video_kbps =
        pt_covered > 0 ? w.udp_rate_kbps * static_cast<double>(pt_modal_hits) /
                             static_cast<double>(pt_covered)
                       : 0.0;
    const auto seqs = decipher::decrypt_seqs(video_window, map);
    w.loss_rate = loss_rate(seqs);
    std::tie(w.iat_mean_ms, w.iat_std_ms) = interarrival_stats(arrivals);
    w.sparse = arrivals.size() < 2 || seqs.size() < 2;
    windows.push_back(w);
  }

  // Drop the trailing window unless the capture nearly spans it. A lone
  // window always stands, so a sparse single-packet capture still reports.
  if (windows.size() >= 2) {
    const auto& last = windows.back();
    const double coverage = static_cast<double>(t_last - last.t_start_us + 1);
    if (coverage < kTrailingCoverage * static_cast<double>(window_us)) {
      windows.pop_back();
    }
  }
  return windows;
}

namespace {
constexpr const char* kQosHeader =
    "t_start_us,duration_us,udp_kbps,video_kbps,fec_kbps,loss,iat_mean_ms,"
    "iat_std_ms,pkts,sparse";
}

void write_qos_csv(std::span<const QosWindow> windows,
                   const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw DataError("cannot open for writing: " + path.string());
  }
  f << kQosHeader << '\n';
  char buf[320];
  for (const auto& w : windows) {
    std::snprintf(buf, sizeof(buf),
                  "%lld,%lld,%.6f,%.6f,%.6f,%.8f,%.6f,%.6f,%llu,%d",
                  static_cast<long long>(w.t_start_us),
                  static_cast<long long>(w.duration_us), w.udp_rate_kbps,
                  w.video_rate_kbps, w.fec_rate_kbps, w.loss_rate,
                  w.iat_mean_ms, w.iat_std_ms,
                  static_cast<unsigned long long>(w.packet_count),
                  w.sparse ? 1 : 0);
    f << buf << '\n';
  }
}

std::vector<QosWindow> read_qos_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw DataError("cannot open QoS CSV: " + path.string());
  }
  std::string line;
  if (!std::getline(f, line) || line != kQosHeader) {
    throw ShapeError("QoS CSV header mismatch in " + path.string() +
                     " (want \"" + kQosHeader + "\")");
  }
  std::vector<QosWindow> windows;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    QosWindow w;
    long long t_start, duration;
    unsigned long long pkts;
    int sparse;
    const int got = std::sscanf(
        line.c_str(), "%lld,%lld,%lf,%lf,%lf,%lf,%lf,%lf,%llu,%d", &t_start,
        &duration, &w.udp_rate_kbps, &w.video_rate_kbps, &w.fec_rate_kbps,
        &w.loss_rate, &w.iat_mean_ms, &w.iat_std_ms, &pkts, &sparse);
    if (got != 10) {
      throw ShapeError("QoS CSV row " + std::to_string(line_no) + " in " +
                       path.string() + " has " + std::to_string(got) +
                       " of 10 columns");
    }
    w.t_start_us = t_start;
    w.duration_us = duration;
    w.packet_count = pkts;
    w.sparse = sparse != 0;
    windows.push_back(w);
  }
  return windows;
}

}  // namespace dai::qos
