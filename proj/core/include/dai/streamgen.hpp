#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dai/errors.hpp"
#include "dai/traffic.hpp"

namespace dai::gen {

// One point of the impairment grid.
struct NetworkCondition {
  int bandwidth_kbps = 5000;
  double loss_rate = 0.0;
  int delay_ms = 0;
  int jitter_ms = 0;
};

// An encoder operating point: bitrate, framerate and 16:9 frame width.
struct GearSpec {
  int bitrate_kbps = 0;
  int framerate_fps = 0;
  int width_px = 0;
};

// Byte positions (1-indexed) of the structured header fields inside the
// media payload. The magic byte stays at position 1; the sequence field is
// two adjacent bytes, big-endian, low byte at seq_high_pos + 1. All other
// positions of the 16-byte header are derived: the first four free
// positions hold the stream identifier, the next two hold fixed
// configuration bytes, the rest vary per packet.
struct FieldLayout {
  int pt_pos = 2;
  int seq_high_pos = 4;

  static constexpr int kMagicPos = 1;
  static constexpr int kHeaderLen = 16;
  int seq_low_pos() const { return seq_high_pos + 1; }

  // Positions that carry per-stream constants (magic, stream id, config).
  std::vector<int> constant_positions() const;
  // Positions filled with fresh random bytes every packet.
  std::vector<int> random_positions() const;

  void validate() const;
};

struct EncoderParams {
  int mtu = 1200;
  double frame_size_cv = 0.2;
  std::vector<GearSpec> gears = {
      {150, 8, 480}, {400, 15, 848}, {600, 24, 1120}, {900, 30, 1280}};
};

struct GenConfig {
  int duration_s = 60;
  std::uint64_t seed = 1;
  NetworkCondition condition;
  FieldLayout layout;
  EncoderParams encoder;
  double fec_base = 0.08;
  double fec_gain = 0.4;
  double chatter_fraction = 0.005;
};

enum class PacketClass { Video, Fec, Chatter };

const char* to_string(PacketClass cls);
PacketClass packet_class_from_string(const std::string& s);

// Per received media packet, in capture order (matches the media flow's
// records one to one). seq is -1 for chatter.
struct PacketTruth {
  std::int64_t ts_us = 0;
  PacketClass cls = PacketClass::Video;
  int seq = -1;
};

// Encoder/controller state during second [t_s, t_s + 1).
struct SecondTruth {
  int t_s = 0;
  int bitrate_kbps = 0;
  int framerate_fps = 0;
  int width_px = 0;
  double fec_ratio = 0.0;
  double loss_rate = 0.0;  // applied (configured) rate
};

// Everything the application log would have told us.
struct GroundTruth {
  FlowKey media_flow;
  FieldLayout layout;
  std::vector<std::uint8_t> keystream;
  std::uint8_t video_pt_plain = 0;
  std::uint8_t fec_pt_plain = 0;
  std::uint8_t video_pt_cipher = 0;
  std::uint16_t seq_key = 0;  // keystream at the two sequence positions
  std::vector<SecondTruth> per_second;
  std::vector<PacketTruth> packets;
  std::uint64_t sent_media_packets = 0;  // video + fec
  std::uint64_t dropped_media_packets = 0;
  std::uint64_t sent_chatter_packets = 0;
  std::uint64_t sent_background_packets = 0;
};

// The reused per-stream keystream; position 1 is forced to zero so the
// magic byte travels unencrypted.
struct StreamKey {
  std::vector<std::uint8_t> keystream;
};

std::vector<std::uint8_t> xor_encrypt(std::span<const std::uint8_t> plain,
                                      const StreamKey& key);

// Synthesizes one encrypted stream under one network condition. Equal
// seeds produce byte-identical captures.
std::pair<Capture, GroundTruth> generate_stream(const GenConfig& config);

// One capture per condition, seeds derived from the base seed by index.
std::vector<std::pair<Capture, GroundTruth>> run_grid(
    std::span<const NetworkCondition> grid, int per_condition_s,
    std::uint64_t seed, const GenConfig& base = {});

// The 27-combination impairment grid used by the experiment harness.
std::vector<NetworkCondition> default_grid();

std::uint64_t derive_condition_seed(std::uint64_t seed, std::size_t index);

std::string ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const std::string& json_text);
void save_ground_truth(const GroundTruth& truth,
                       const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

// Per-packet CSV: ts_us,class,seq.
void write_packets_csv(const GroundTruth& truth,
                       const std::filesystem::path& path);

}  // namespace dai::gen
