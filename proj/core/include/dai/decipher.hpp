#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dai/errors.hpp"
#include "dai/traffic.hpp"

namespace dai::decipher {

// Per byte position: the most frequent cipher value and its frequency.
struct PositionStat {
  std::uint8_t modal_value = 0;
  double modal_freq = 0.0;
  std::uint64_t covered = 0;  // packets long enough to cover the position
};

struct ByteFrequencyProfile {
  std::vector<PositionStat> positions;  // positions[i] is byte position i+1
  std::uint64_t packet_count = 0;
};

// Exact value counts over the first n_positions payload bytes of a flow;
// packets shorter than a position are only counted where they exist.
// Modal ties break toward the smaller byte value.
ByteFrequencyProfile byte_frequency(const Capture& flow, int n_positions = 16);

// Positions whose modal frequency reaches the threshold (default 99%).
std::set<int> find_constant_fields(const ByteFrequencyProfile& profile,
                                   double threshold = 0.99);

struct PearsonResult {
  double r = 0.0;
  bool degenerate = false;  // a zero-variance series; r is reported as 0
};

PearsonResult pearson(std::span<const double> xs, std::span<const double> ys);

// Captures taken at known induced loss rates.
struct CalibrationSet {
  std::vector<std::pair<double, Capture>> entries;  // (applied loss, flow)
};

struct PtLocation {
  int position = 0;
  std::uint8_t video_pt_cipher = 0;
  std::vector<double> correlations;  // per position, 0 where excluded
};

// Finds the payload-type byte: the non-constant position whose modal
// frequency is most negatively correlated with the applied loss rate.
// Gates: winning r <= r_accept and modal-frequency span >= min_span, so a
// flat calibration surfaces as a typed error instead of a guess.
PtLocation locate_pt(const CalibrationSet& calibration, int n_positions,
                     const std::set<int>& exclude, double r_accept = -0.7,
                     double min_span = 0.02);

// Splits a flow on the payload-type byte: (video, everything else).
std::pair<Capture, Capture> classify_packets(const Capture& flow,
                                             int pt_position,
                                             std::uint8_t video_pt_cipher);

// n XOR (n+1) is always a power of two minus one (p >= 1, so 0 fails).
constexpr bool is_pow2_minus1(std::uint64_t v) {
  return v != 0 && (v & (v + 1)) == 0;
}

struct SeqLocation {
  int low_position = 0;
  std::vector<double> scores;  // per position
};

// Finds the low byte of the sequence counter: the position where the XOR
// of adjacent video packets is a power of two minus one almost always.
// Accepts when the winner scores >= winner_min and the runner-up stays
// <= runner_max.
SeqLocation locate_seq(const Capture& video, int n_positions = 16,
                       double winner_min = 0.9, double runner_max = 0.5);

struct SeqKeyResult {
  int high_position = 0;  // equals low_position when width == 1
  int low_position = 0;
  int width = 2;
  std::uint16_t key = 0;
  double score = 0.0;  // fraction of adjacent decrypted deltas equal to 1
};

// Recovers the XOR key over the sequence field by scoring all 2^16 keys on
// the fraction of adjacent decrypted deltas equal to 1 (mod 2^16). Falls
// back to a one-byte field when no two-byte key reaches accept_score.
// Key bits above the highest observed carry are not identifiable from
// ciphertext alone; tied top scorers are resolved toward the key whose
// non-unit deltas look most like packet loss (small forward gaps), then
// toward the trajectory closest to the counter origin (smallest minimum
// decrypted value), then the smallest key.
SeqKeyResult recover_seq_key(const Capture& video, int low_position,
                             double accept_score = 0.8);

// Acceptance gates of the discovery pipeline. Defaults are conservative:
// failures surface as typed errors instead of silent misidentification.
struct Thresholds {
  double pt_r_accept = -0.7;
  double pt_min_span = 0.02;
  double seq_winner_min = 0.9;
  double seq_runner_max = 0.5;
  double key_accept = 0.8;
};

// The recovered cipher layout of one stream.
struct FieldMap {
  std::set<int> constant_positions;
  int pt_position = 0;
  std::uint8_t video_pt_cipher = 0;
  int seq_high_position = 0;
  int seq_low_position = 0;
  int seq_width = 2;
  std::uint16_t seq_key = 0;
  std::vector<double> correlations;  // diagnostics, per position
  std::vector<double> xor_scores;    // diagnostics, per position

  bool operator==(const FieldMap& other) const {
    return constant_positions == other.constant_positions &&
           pt_position == other.pt_position &&
           video_pt_cipher == other.video_pt_cipher &&
           seq_high_position == other.seq_high_position &&
           seq_low_position == other.seq_low_position &&
           seq_width == other.seq_width && seq_key == other.seq_key;
  }
};

// Full pipeline over a calibration set: frequency profile, constant
// fields, PT localization, packet classification on the lowest-loss
// capture, sequence-field localization and key recovery.
FieldMap discover(const CalibrationSet& calibration, int n_positions = 16,
                  const Thresholds& thresholds = {});

// Re-derives the per-stream cipher values (PT cipher byte, sequence key)
// of a fresh stream that shares a known platform layout. Positions carry
// over; values are recomputed from the flow itself.
FieldMap rekey(const Capture& flow, const FieldMap& layout,
               const Thresholds& thresholds = {});

enum class MediaClass { Video, Fec, Other };

// Per-record classification using the full field map: packets deviating
// from the flow's modal value at any constant position are unrelated
// traffic on the same 5-tuple; the rest split on the payload-type byte.
std::vector<MediaClass> classify_media(const Capture& flow,
                                       const FieldMap& map);

// The video sub-capture per classify_media.
Capture video_of(const Capture& flow, const FieldMap& map);

// Decrypts the sequence numbers of a video-classified flow.
std::vector<std::uint16_t> decrypt_seqs(const Capture& video,
                                        const FieldMap& map);

std::string to_json(const FieldMap& map);
FieldMap field_map_from_json(const std::string& json_text);
void save_field_map(const FieldMap& map, const std::filesystem::path& path);
FieldMap load_field_map(const std::filesystem::path& path);

}  // namespace dai::decipher
