#include "dai/streamgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rng.hpp"

namespace dai::gen {

namespace {

constexpr int kChatterOffsetUs = 50;  // chatter trails the packet it shadows
constexpr double kQueueCapacityBytes = 12288.0;
constexpr std::size_t kKeystreamLen = 1500;

constexpr Ipv4 kSenderIp = 0x0a000002;    // 10.0.0.2 (client B)
constexpr Ipv4 kReceiverIp = 0x0a000001;  // 10.0.0.1 (client A)

struct SentPacket {
  std::int64_t ts_us = 0;
  std::uint32_t emission_idx = 0;
  bool media = false;
  PacketClass cls = PacketClass::Chatter;
  int seq = -1;
  std::vector<std::uint8_t> payload;
};

struct ReceivedPacket {
  std::int64_t arrival_us = 0;
  std::uint32_t emission_idx = 0;
  bool media = false;
  PacketClass cls = PacketClass::Chatter;
  int seq = -1;
  std::vector<std::uint8_t> payload;
};

// Rate limiter at the bottleneck: a FIFO drained at the link rate with
// tail drop when the backlog would exceed the queue capacity. Queueing
// delay rides on every forwarded packet.
class ShapingQueue {
 public:
  explicit ShapingQueue(int bandwidth_kbps)
      : rate_per_us_(bandwidth_kbps / 8000.0) {}

  // Queueing delay in microseconds, or -1 when the packet is tail-dropped.
  std::int64_t offer(std::int64_t ts_us, std::size_t bytes) {
    backlog_ = std::max(
        0.0, backlog_ - static_cast<double>(ts_us - last_us_) * rate_per_us_);
    last_us_ = ts_us;
    if (backlog_ + static_cast<double>(bytes) > kQueueCapacityBytes) {
      return -1;
    }
    backlog_ += static_cast<double>(bytes);
    return std::llround(backlog_ / rate_per_us_);
  }

 private:
  double rate_per_us_;
  double backlog_ = 0.0;
  std::int64_t last_us_ = 0;
};

void fill_random(std::vector<std::uint8_t>& buf, detail::Rng& rng) {
  std::size_t i = 0;
  for (; i + 8 <= buf.size(); i += 8) {
    std::uint64_t v = rng.u64();
    std::memcpy(buf.data() + i, &v, 8);
  }
  for (; i < buf.size(); ++i) {
    buf[i] = rng.byte();
  }
}

std::string hex_encode(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

std::vector<std::uint8_t> hex_decode(const std::string& hex) {
  if (hex.size() % 2 != 0) {
    throw DataError("odd hex string length");
  }
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw DataError("invalid hex digit");
  };
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 |
                                       nibble(hex[2 * i + 1]));
  }
  return out;
}

void validate_config(const GenConfig& cfg) {
  if (cfg.duration_s <= 0) {
    throw ConfigError("duration_s must be positive");
  }
  if (cfg.condition.bandwidth_kbps <= 0) {
    throw ConfigError("bandwidth_kbps must be positive");
  }
  if (cfg.condition.loss_rate < 0.0 || cfg.condition.loss_rate > 1.0) {
    throw ConfigError("loss_rate must lie in [0, 1]");
  }
  if (cfg.condition.delay_ms < 0 || cfg.condition.jitter_ms < 0) {
    throw ConfigError("delay_ms/jitter_ms must be non-negative");
  }
  if (cfg.encoder.gears.empty()) {
    throw ConfigError("encoder gear table is empty");
  }
  int floor_kbps = cfg.encoder.gears.front().bitrate_kbps;
  for (const auto& g : cfg.encoder.gears) {
    if (g.bitrate_kbps <= 0 || g.framerate_fps <= 0 || g.width_px <= 0) {
      throw ConfigError("gear entries must be positive");
    }
    floor_kbps = std::min(floor_kbps, g.bitrate_kbps);
  }
  if (floor_kbps > cfg.condition.bandwidth_kbps) {
    throw ConfigError("infeasible config: lowest gear bitrate " +
                      std::to_string(floor_kbps) + " kbps exceeds bandwidth " +
                      std::to_string(cfg.condition.bandwidth_kbps) + " kbps");
  }
  if (cfg.encoder.mtu < FieldLayout::kHeaderLen * 4 ||
      cfg.encoder.mtu > static_cast<int>(kKeystreamLen)) {
    throw ConfigError("mtu must lie in [64, 1500]");
  }
  if (cfg.encoder.frame_size_cv < 0.0 || cfg.encoder.frame_size_cv > 1.0) {
    throw ConfigError("frame_size_cv must lie in [0, 1]");
  }
  if (cfg.chatter_fraction < 0.0 || cfg.chatter_fraction >= 1.0) {
    throw ConfigError("chatter_fraction must lie in [0, 1)");
  }
  if (cfg.fec_base < 0.0 || cfg.fec_gain < 0.0) {
    throw ConfigError("fec parameters must be non-negative");
  }
  cfg.layout.validate();
}

}  // namespace

void FieldLayout::validate() const {
  const int lo = seq_low_pos();
  if (pt_pos < 2 || pt_pos > kHeaderLen) {
    throw ConfigError("pt_pos must lie in [2, 16]");
  }
  if (seq_high_pos < 2 || lo > kHeaderLen) {
    throw ConfigError("seq positions must lie in [2, 16]");
  }
  if (pt_pos == seq_high_pos || pt_pos == lo) {
    throw ConfigError("pt_pos collides with the sequence field");
  }
}

std::vector<int> FieldLayout::constant_positions() const {
  std::vector<int> free_pos;
  for (int p = 2; p <= kHeaderLen; ++p) {
    if (p != pt_pos && p != seq_high_pos && p != seq_low_pos()) {
      free_pos.push_back(p);
    }
  }
  std::vector<int> out = {kMagicPos};
  for (std::size_t i = 0; i < 6 && i < free_pos.size(); ++i) {
    out.push_back(free_pos[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> FieldLayout::random_positions() const {
  std::vector<int> free_pos;
  for (int p = 2; p <= kHeaderLen; ++p) {
    if (p != pt_pos && p != seq_high_pos && p != seq_low_pos()) {
      free_pos.push_back(p);
    }
  }
  std::vector<int> out;
  for (std::size_t i = 6; i < free_pos.size(); ++i) {
    out.push_back(free_pos[i]);
  }
  return out;
}

const char* to_string(PacketClass cls) {
  switch (cls) {
    case PacketClass::Video:
      return "video";
    case PacketClass::Fec:
      return "fec";
    case PacketClass::Chatter:
      return "chatter";
  }
  return "?";
}

PacketClass packet_class_from_string(const std::string& s) {
  if (s == "video") return PacketClass::Video;
  if (s == "fec") return PacketClass::Fec;
  if (s == "chatter") return PacketClass::Chatter;
  throw DataError("unknown packet class: " + s);
}

std::vector<std::uint8_t> xor_encrypt(std::span<const std::uint8_t> plain,
                                      const StreamKey& key) {
  if (key.keystream.size() < plain.size()) {
    throw KeyLengthError("keystream shorter than payload: " +
                         std::to_string(key.keystream.size()) + " < " +
                         std::to_string(plain.size()));
  }
  std::vector<std::uint8_t> out(plain.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    out[i] = plain[i] ^ key.keystream[i];
  }
  return out;
}

std::pair<Capture, GroundTruth> generate_stream(const GenConfig& cfg) {
  validate_config(cfg);

  detail::Rng rng_content(detail::mix_seed(cfg.seed, 0));
  detail::Rng rng_imp(detail::mix_seed(cfg.seed, 1));
  detail::Rng rng_side(detail::mix_seed(cfg.seed, 2));
  detail::Rng rng_mac(detail::mix_seed(cfg.seed, 3));

  GroundTruth truth;
  truth.layout = cfg.layout;
  truth.media_flow = FlowKey{kSenderIp, kReceiverIp, 50102, 44300};
  const FlowKey background_flow{kSenderIp, kReceiverIp, 50103, 44301};

  truth.keystream.resize(kKeystreamLen);
  fill_random(truth.keystream, rng_content);
  truth.keystream[FieldLayout::kMagicPos - 1] = 0;
  truth.video_pt_plain = rng_content.byte();
  do {
    truth.fec_pt_plain = rng_content.byte();
  } while (truth.fec_pt_plain == truth.video_pt_plain);
  truth.video_pt_cipher =
      truth.video_pt_plain ^ truth.keystream[cfg.layout.pt_pos - 1];
  truth.seq_key = static_cast<std::uint16_t>(
      truth.keystream[cfg.layout.seq_high_pos - 1] << 8 |
      truth.keystream[cfg.layout.seq_low_pos() - 1]);

  std::vector<std::uint8_t> ssrc(4), config_bytes(2);
  fill_random(ssrc, rng_content);
  fill_random(config_bytes, rng_content);

  const auto const_positions = cfg.layout.constant_positions();
  // const_positions = magic + 4 stream-id bytes + 2 config bytes, ascending.
  std::vector<std::pair<int, std::uint8_t>> const_values;
  {
    std::size_t i = 0;
    for (int p : const_positions) {
      if (p == FieldLayout::kMagicPos) {
        const_values.emplace_back(p, 65);
      } else if (i < 4) {
        const_values.emplace_back(p, ssrc[i++]);
      } else {
        const_values.emplace_back(p, config_bytes[i++ - 4]);
      }
    }
  }

  auto make_media_payload = [&](PacketClass cls, int seq, int size) {
    std::vector<std::uint8_t> p(static_cast<std::size_t>(size));
    fill_random(p, rng_content);
    for (auto [pos, val] : const_values) {
      p[pos - 1] = val;
    }
    p[cfg.layout.pt_pos - 1] =
        cls == PacketClass::Video ? truth.video_pt_plain : truth.fec_pt_plain;
    p[cfg.layout.seq_high_pos - 1] = static_cast<std::uint8_t>(seq >> 8);
    p[cfg.layout.seq_low_pos() - 1] = static_cast<std::uint8_t>(seq & 0xff);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] ^= truth.keystream[i];
    }
    return p;
  };

  const auto& gears = cfg.encoder.gears;
  std::size_t gear_idx = gears.size() - 1;  // start at the top gear
  std::int64_t next_frame_us = 0;
  std::int64_t next_bg_us = 7000;
  int video_seq = 0;
  int fec_seq = 0;
  int packet_size_target = cfg.encoder.mtu;
  double pacing_spread = 0.25;
  double pacing_fill = 1.0;  // fraction of the frame interval used to pace
  double fec_debt = 0.0;
  double fec_ratio = std::clamp(cfg.fec_base, 0.05, 0.5);
  double ema_loss = 0.0;
  bool have_ema = false;
  int bad_seconds = 0;
  int stable_seconds = 0;

  ShapingQueue bottleneck(cfg.condition.bandwidth_kbps);
  std::uint32_t emission_idx = 0;
  std::vector<ReceivedPacket> received;
  std::vector<SentPacket> second_batch;
  std::vector<SentPacket> carryover;  // paced past the second boundary

  // Wireless hop: the MAC releases queued frames in aggregated transmit
  // opportunities, so receiver inter-arrivals carry contention cadence
  // rather than the sender's pacing. FIFO, never reorders.
  std::int64_t next_txop_us = 0;
  std::int64_t mac_busy_until_us = 0;
  auto mac_departure = [&](std::int64_t ready_us) {
    while (next_txop_us < ready_us) {
      next_txop_us += rng_mac.uniform_int(800, 6000);
    }
    const std::int64_t departure =
        std::max(next_txop_us, mac_busy_until_us + 60);
    mac_busy_until_us = departure;
    return departure;
  };

  const std::int64_t delay_us =
      static_cast<std::int64_t>(cfg.condition.delay_ms) * 1000;
  const std::int64_t jitter_us =
      static_cast<std::int64_t>(cfg.condition.jitter_ms) * 1000;

  auto push_media = [&](std::int64_t ts, PacketClass cls, int seq, int size) {
    SentPacket sp;
    sp.ts_us = ts;
    sp.emission_idx = emission_idx++;
    sp.media = true;
    sp.cls = cls;
    sp.seq = seq;
    sp.payload = make_media_payload(cls, seq, size);
    second_batch.push_back(std::move(sp));
    // Occasionally shadow a media packet with an unrelated datagram on the
    // same 5-tuple; these keep the modal byte frequencies just under 100%.
    if (rng_side.bernoulli(cfg.chatter_fraction)) {
      SentPacket ch;
      ch.ts_us = ts + kChatterOffsetUs;
      ch.emission_idx = emission_idx++;
      ch.media = true;
      ch.cls = PacketClass::Chatter;
      ch.seq = -1;
      ch.payload.resize(static_cast<std::size_t>(60 + rng_side.uniform_int(0, 240)));
      fill_random(ch.payload, rng_side);
      if (ch.payload[0] == 65) {
        ch.payload[0] = 66;
      }
      second_batch.push_back(std::move(ch));
    }
  };

  for (int sec = 0; sec < cfg.duration_s; ++sec) {
    const auto& g = gears[gear_idx];
    truth.per_second.push_back(SecondTruth{sec, g.bitrate_kbps,
                                           g.framerate_fps, g.width_px,
                                           fec_ratio,
                                           cfg.condition.loss_rate});
    const std::int64_t second_end = static_cast<std::int64_t>(sec + 1) * 1'000'000;
    second_batch = std::move(carryover);
    carryover.clear();

    // Slicing regime: encoders re-balance fragment sizes with content and
    // rate control, so packets-per-frame drifts even at a fixed gear.
    // Regimes persist a few seconds; sender burstiness drifts with them,
    // from near-line-rate bursts to smooth pacing across the interval.
    if (sec == 0 || rng_content.uniform01() < 0.25) {
      packet_size_target = static_cast<int>(
          cfg.encoder.mtu / 3 +
          rng_content.uniform_int(0, 2 * cfg.encoder.mtu / 3));
    }
    pacing_spread = 0.05 + 0.40 * rng_content.uniform01();
    pacing_fill = 0.3 + 0.7 * rng_content.uniform01();

    while (next_frame_us < second_end) {
      const std::int64_t frame_interval_us = 1'000'000 / g.framerate_fps;
      double noise = 1.0 + cfg.encoder.frame_size_cv * rng_content.normalish();
      noise = std::clamp(noise, 0.25, 4.0);
      std::int64_t frame_bytes = std::llround(
          g.bitrate_kbps * 125.0 / g.framerate_fps * noise);
      frame_bytes = std::max<std::int64_t>(frame_bytes, FieldLayout::kHeaderLen);

      // Balanced packetization at the current slicing target: the frame
      // splits into equal-sized packets, and its parity packets match.
      std::vector<std::pair<PacketClass, std::pair<int, int>>> frame_pkts;
      const std::int64_t n_video =
          (frame_bytes + packet_size_target - 1) / packet_size_target;
      std::int64_t video_bytes = 0;
      for (std::int64_t i = 0; i < n_video; ++i) {
        const std::int64_t size = std::max<std::int64_t>(
            frame_bytes / n_video + (i < frame_bytes % n_video ? 1 : 0),
            FieldLayout::kHeaderLen);
        frame_pkts.push_back(
            {PacketClass::Video, {video_seq, static_cast<int>(size)}});
        video_seq = (video_seq + 1) & 0xffff;
        video_bytes += size;
      }
      const int fec_size =
          static_cast<int>(std::max<std::int64_t>(frame_bytes / n_video,
                                                  FieldLayout::kHeaderLen));
      fec_debt += static_cast<double>(video_bytes) * fec_ratio;
      while (fec_debt >= fec_size) {
        frame_pkts.push_back({PacketClass::Fec, {fec_seq, fec_size}});
        fec_seq = (fec_seq + 1) & 0xffff;
        fec_debt -= fec_size;
      }

      // Paced sender: spread the frame's packets across the paced part of
      // the frame interval with drifting scheduling jitter; the jitter
      // stays below half a slot so emission order is preserved.
      const auto n = static_cast<std::int64_t>(frame_pkts.size());
      const std::int64_t slot_us = static_cast<std::int64_t>(
          pacing_fill * static_cast<double>(frame_interval_us)) / n;
      const auto max_jitter =
          static_cast<std::int64_t>(pacing_spread * static_cast<double>(slot_us));
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t jitter =
            max_jitter > 0 ? rng_content.uniform_int(0, max_jitter) : 0;
        push_media(next_frame_us + i * slot_us + jitter,
                   frame_pkts[static_cast<std::size_t>(i)].first,
                   frame_pkts[static_cast<std::size_t>(i)].second.first,
                   frame_pkts[static_cast<std::size_t>(i)].second.second);
      }
      next_frame_us += frame_interval_us;
    }

    while (next_bg_us < second_end) {
      SentPacket bg;
      bg.ts_us = next_bg_us;
      bg.emission_idx = emission_idx++;
      bg.media = false;
      bg.payload.resize(static_cast<std::size_t>(60 + rng_side.uniform_int(0, 140)));
      fill_random(bg.payload, rng_side);
      second_batch.push_back(std::move(bg));
      next_bg_us += 50'000;
    }

    std::sort(second_batch.begin(), second_batch.end(),
              [](const SentPacket& a, const SentPacket& b) {
                return a.ts_us != b.ts_us ? a.ts_us < b.ts_us
                                          : a.emission_idx < b.emission_idx;
              });

    std::uint64_t past_bucket_media = 0;
    std::uint64_t random_dropped_media = 0;
    std::uint64_t delivered_bytes = 0;
    for (auto& sp : second_batch) {
      if (sp.ts_us >= second_end && sec + 1 < cfg.duration_s) {
        carryover.push_back(std::move(sp));
        continue;
      }
      const std::int64_t queue_delay_us =
          bottleneck.offer(sp.ts_us, sp.payload.size());
      bool pass = queue_delay_us >= 0;
      bool random_drop = false;
      if (pass) {
        if (sp.media) {
          ++past_bucket_media;
        }
        if (rng_imp.bernoulli(cfg.condition.loss_rate)) {
          pass = false;
          random_drop = sp.media;
        }
      }
      if (sp.media) {
        if (random_drop) {
          ++random_dropped_media;
        }
        if (sp.cls != PacketClass::Chatter) {
          ++truth.sent_media_packets;
        } else {
          ++truth.sent_chatter_packets;
        }
        if (!pass && sp.cls != PacketClass::Chatter) {
          ++truth.dropped_media_packets;
        }
      } else {
        ++truth.sent_background_packets;
      }
      if (!pass) {
        continue;
      }
      std::int64_t arrival =
          mac_departure(sp.ts_us + queue_delay_us) + delay_us;
      if (jitter_us > 0) {
        arrival += rng_imp.uniform_int(0, jitter_us);
      }
      if (sp.media && sp.cls != PacketClass::Chatter) {
        delivered_bytes += sp.payload.size();
      }
      ReceivedPacket rp;
      rp.arrival_us = arrival;
      rp.emission_idx = sp.emission_idx;
      rp.media = sp.media;
      rp.cls = sp.cls;
      rp.seq = sp.seq;
      rp.payload = std::move(sp.payload);
      received.push_back(std::move(rp));
    }

    // Rate controller: two bad seconds step the gear down, ten stable
    // seconds step it back up.
    double delivered_kbps = static_cast<double>(delivered_bytes) * 8.0 / 1000.0;
    if (delivered_kbps < static_cast<double>(g.bitrate_kbps)) {
      ++bad_seconds;
      stable_seconds = 0;
    } else {
      ++stable_seconds;
      bad_seconds = 0;
    }
    if (bad_seconds >= 2 && gear_idx > 0) {
      --gear_idx;
      bad_seconds = 0;
      stable_seconds = 0;
    } else if (stable_seconds >= 10 && gear_idx + 1 < gears.size()) {
      ++gear_idx;
      bad_seconds = 0;
      stable_seconds = 0;
    }

    // FEC tracks the receiver's estimate of the path's random-loss floor.
    // Transient congestion drops are the rate controller's problem, and
    // coupling FEC to them would feed the overshoot it causes.
    double sec_loss = past_bucket_media > 0
                          ? static_cast<double>(random_dropped_media) /
                                static_cast<double>(past_bucket_media)
                          : 0.0;
    ema_loss = have_ema ? 0.5 * ema_loss + 0.5 * sec_loss : sec_loss;
    have_ema = true;
    fec_ratio = std::clamp(cfg.fec_base + cfg.fec_gain * ema_loss, 0.05, 0.5);
  }

  std::sort(received.begin(), received.end(),
            [](const ReceivedPacket& a, const ReceivedPacket& b) {
              return a.arrival_us != b.arrival_us
                         ? a.arrival_us < b.arrival_us
                         : a.emission_idx < b.emission_idx;
            });

  Capture capture;
  capture.records.reserve(received.size());
  truth.packets.reserve(received.size());
  for (auto& rp : received) {
    UdpRecord rec;
    rec.ts_us = rp.arrival_us;
    rec.flow = rp.media ? truth.media_flow : background_flow;
    rec.payload = std::move(rp.payload);
    capture.records.push_back(std::move(rec));
    if (rp.media) {
      truth.packets.push_back(PacketTruth{rp.arrival_us, rp.cls, rp.seq});
    }
  }
  capture.epoch_us = capture.records.empty() ? 0 : capture.records.front().ts_us;
  return {std::move(capture), std::move(truth)};
}

std::vector<std::pair<Capture, GroundTruth>> run_grid(
    std::span<const NetworkCondition> grid, int per_condition_s,
    std::uint64_t seed, const GenConfig& base) {
  if (grid.empty()) {
    throw ConfigError("run_grid: empty condition grid");
  }
  if (per_condition_s <= 0) {
    throw ConfigError("run_grid: per_condition_s must be positive");
  }
  std::vector<std::pair<Capture, GroundTruth>> out;
  out.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    GenConfig cfg = base;
    cfg.condition = grid[i];
    cfg.duration_s = per_condition_s;
    cfg.seed = derive_condition_seed(seed, i);
    out.push_back(generate_stream(cfg));
  }
  return out;
}

std::vector<NetworkCondition> default_grid() {
  std::vector<NetworkCondition> grid;
  for (int bw : {900, 1000, 1100}) {
    for (double loss : {0.0, 0.05, 0.10}) {
      for (int delay : {0, 100, 200}) {
        grid.push_back(NetworkCondition{bw, loss, delay, 0});
      }
    }
  }
  return grid;
}

std::uint64_t derive_condition_seed(std::uint64_t seed, std::size_t index) {
  return detail::mix_seed(seed, index);
}

std::string ground_truth_to_json(const GroundTruth& truth) {
  nlohmann::json j;
  j["media_flow"] = {{"src_ip", ipv4_to_string(truth.media_flow.src_ip)},
                     {"src_port", truth.media_flow.src_port},
                     {"dst_ip", ipv4_to_string(truth.media_flow.dst_ip)},
                     {"dst_port", truth.media_flow.dst_port}};
  j["layout"] = {{"magic_pos", FieldLayout::kMagicPos},
                 {"pt_pos", truth.layout.pt_pos},
                 {"seq_high_pos", truth.layout.seq_high_pos},
                 {"seq_low_pos", truth.layout.seq_low_pos()},
                 {"constant_positions", truth.layout.constant_positions()},
                 {"random_positions", truth.layout.random_positions()}};
  j["keystream_hex"] = hex_encode(truth.keystream);
  j["video_pt_plain"] = truth.video_pt_plain;
  j["fec_pt_plain"] = truth.fec_pt_plain;
  j["video_pt_cipher"] = truth.video_pt_cipher;
  j["seq_key"] = truth.seq_key;
  j["sent_media_packets"] = truth.sent_media_packets;
  j["dropped_media_packets"] = truth.dropped_media_packets;
  j["sent_chatter_packets"] = truth.sent_chatter_packets;
  j["sent_background_packets"] = truth.sent_background_packets;
  nlohmann::json seconds = nlohmann::json::array();
  for (const auto& s : truth.per_second) {
    seconds.push_back({{"t_s", s.t_s},
                       {"bitrate_kbps", s.bitrate_kbps},
                       {"framerate_fps", s.framerate_fps},
                       {"width_px", s.width_px},
                       {"fec_ratio", s.fec_ratio},
                       {"loss_rate", s.loss_rate}});
  }
  j["per_second"] = std::move(seconds);
  return j.dump(2);
}

GroundTruth ground_truth_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("ground truth JSON parse error: ") + e.what());
  }
  try {
    GroundTruth truth;
    const auto& flow = j.at("media_flow");
    truth.media_flow.src_ip = ipv4_from_string(flow.at("src_ip"));
    truth.media_flow.dst_ip = ipv4_from_string(flow.at("dst_ip"));
    truth.media_flow.src_port = flow.at("src_port").get<std::uint16_t>();
    truth.media_flow.dst_port = flow.at("dst_port").get<std::uint16_t>();
    const auto& layout = j.at("layout");
    truth.layout.pt_pos = layout.at("pt_pos").get<int>();
    truth.layout.seq_high_pos = layout.at("seq_high_pos").get<int>();
    truth.keystream = hex_decode(j.at("keystream_hex").get<std::string>());
    truth.video_pt_plain = j.at("video_pt_plain").get<std::uint8_t>();
    truth.fec_pt_plain = j.at("fec_pt_plain").get<std::uint8_t>();
    truth.video_pt_cipher = j.at("video_pt_cipher").get<std::uint8_t>();
    truth.seq_key = j.at("seq_key").get<std::uint16_t>();
    truth.sent_media_packets = j.at("sent_media_packets").get<std::uint64_t>();
    truth.dropped_media_packets =
        j.at("dropped_media_packets").get<std::uint64_t>();
    truth.sent_chatter_packets =
        j.at("sent_chatter_packets").get<std::uint64_t>();
    truth.sent_background_packets =
        j.at("sent_background_packets").get<std::uint64_t>();
    for (const auto& s : j.at("per_second")) {
      SecondTruth st;
      st.t_s = s.at("t_s").get<int>();
      st.bitrate_kbps = s.at("bitrate_kbps").get<int>();
      st.framerate_fps = s.at("framerate_fps").get<int>();
      st.width_px = s.at("width_px").get<int>();
      st.fec_ratio = s.at("fec_ratio").get<double>();
      st.loss_rate = s.at("loss_rate").get<double>();
      truth.per_second.push_back(st);
    }
    return truth;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("ground truth JSON schema error: ") + e.what());
  }
}

void save_ground_truth(const GroundTruth& truth,
                       const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw DataError("cannot open for writing: " + path.string());
  }
  f << ground_truth_to_json(truth) << '\n';
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw DataError("cannot open ground truth file: " + path.string());
  }
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return ground_truth_from_json(text);
}

void write_packets_csv(const GroundTruth& truth,
                       const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw DataError("cannot open for writing: " + path.string());
  }
  f << "ts_us,class,seq\n";
  for (const auto& p : truth.packets) {
    f << p.ts_us << ',' << to_string(p.cls) << ',' << p.seq << '\n';
  }
}

}  // namespace dai::gen
