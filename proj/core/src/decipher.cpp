#include "dai/decipher.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dai::decipher {

namespace {

struct BytePair {
  std::uint8_t h1, l1, h2, l2;
};

std::string score_table(std::span<const double> scores) {
  std::ostringstream os;
  os.precision(4);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i) os << ' ';
    os << (i + 1) << ':' << scores[i];
  }
  return os.str();
}

}  // namespace

ByteFrequencyProfile byte_frequency(const Capture& flow, int n_positions) {
  if (flow.empty()) {
    throw EmptyInputError("byte_frequency: empty flow");
  }
  if (n_positions < 1) {
    throw UsageError("byte_frequency: n_positions must be positive");
  }
  std::vector<std::array<std::uint64_t, 256>> counts(
      static_cast<std::size_t>(n_positions));
  for (auto& c : counts) {
    c.fill(0);
  }
  for (const auto& rec : flow.records) {
    const std::size_t n =
        std::min<std::size_t>(rec.payload.size(), counts.size());
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[i][rec.payload[i]];
    }
  }
  ByteFrequencyProfile profile;
  profile.packet_count = flow.size();
  profile.positions.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::uint64_t covered = 0;
    std::uint64_t best = 0;
    int best_value = 0;
    for (int v = 0; v < 256; ++v) {
      covered += counts[i][v];
      if (counts[i][v] > best) {  // ties keep the smaller byte value
        best = counts[i][v];
        best_value = v;
      }
    }
    profile.positions[i].modal_value = static_cast<std::uint8_t>(best_value);
    profile.positions[i].covered = covered;
    profile.positions[i].modal_freq =
        covered > 0 ? static_cast<double>(best) / static_cast<double>(covered)
                    : 0.0;
  }
  return profile;
}

std::set<int> find_constant_fields(const ByteFrequencyProfile& profile,
                                   double threshold) {
  std::set<int> out;
  for (std::size_t i = 0; i < profile.positions.size(); ++i) {
    if (profile.positions[i].covered > 0 &&
        profile.positions[i].modal_freq >= threshold) {
      out.insert(static_cast<int>(i) + 1);
    }
  }
  return out;
}

PearsonResult pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ShapeError("pearson: series lengths differ: " +
                     std::to_string(xs.size()) + " vs " +
                     std::to_string(ys.size()));
  }
  if (xs.size() < 2) {
    throw ShapeError("pearson: need at least 2 points");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    return {0.0, true};
  }
  return {sxy / std::sqrt(sxx * syy), false};
}

PtLocation locate_pt(const CalibrationSet& calibration, int n_positions,
                     const std::set<int>& exclude, double r_accept,
                     double min_span) {
  std::set<double> distinct_rates;
  for (const auto& [rate, capture] : calibration.entries) {
    distinct_rates.insert(rate);
  }
  if (distinct_rates.size() < 3) {
    throw UsageError("locate_pt: need at least 3 distinct loss rates, got " +
                     std::to_string(distinct_rates.size()));
  }

  std::vector<double> rates;
  std::vector<ByteFrequencyProfile> profiles;
  std::size_t base_idx = 0;
  for (std::size_t i = 0; i < calibration.entries.size(); ++i) {
    rates.push_back(calibration.entries[i].first);
    profiles.push_back(
        byte_frequency(calibration.entries[i].second, n_positions));
    if (calibration.entries[i].first < calibration.entries[base_idx].first) {
      base_idx = i;
    }
  }

  PtLocation loc;
  loc.correlations.assign(static_cast<std::size_t>(n_positions), 0.0);
  int best_pos = 0;
  double best_r = 1.0;
  for (int pos = 1; pos <= n_positions; ++pos) {
    if (exclude.count(pos)) {
      continue;
    }
    std::vector<double> freqs;
    freqs.reserve(profiles.size());
    for (const auto& pr : profiles) {
      freqs.push_back(pr.positions[static_cast<std::size_t>(pos - 1)].modal_freq);
    }
    const auto res = pearson(rates, freqs);
    loc.correlations[static_cast<std::size_t>(pos - 1)] = res.r;
    if (res.degenerate) {
      continue;
    }
    const auto [min_f, max_f] = std::minmax_element(freqs.begin(), freqs.end());
    if (*max_f - *min_f < min_span) {
      continue;  // flat series; any correlation there is noise
    }
    if (res.r < best_r) {
      best_r = res.r;
      best_pos = pos;
    }
  }
  if (best_pos == 0 || best_r > r_accept) {
    throw PtNotFoundError(
        "locate_pt: no position is negatively correlated with loss (best r=" +
        std::to_string(best_r) + " at position " + std::to_string(best_pos) +
        "); correlations: " + score_table(loc.correlations));
  }
  loc.position = best_pos;
  loc.video_pt_cipher = profiles[base_idx]
                            .positions[static_cast<std::size_t>(best_pos - 1)]
                            .modal_value;
  return loc;
}

std::pair<Capture, Capture> classify_packets(const Capture& flow,
                                             int pt_position,
                                             std::uint8_t video_pt_cipher) {
  if (pt_position < 1) {
    throw UsageError("classify_packets: invalid pt_position");
  }
  Capture video, rest;
  video.epoch_us = rest.epoch_us = flow.epoch_us;
  const auto idx = static_cast<std::size_t>(pt_position - 1);
  for (const auto& rec : flow.records) {
    if (rec.payload.size() > idx && rec.payload[idx] == video_pt_cipher) {
      video.records.push_back(rec);
    } else {
      rest.records.push_back(rec);
    }
  }
  return {std::move(video), std::move(rest)};
}

SeqLocation locate_seq(const Capture& video, int n_positions,
                       double winner_min, double runner_max) {
  if (video.size() < 100) {
    throw InsufficientDataError(
        "locate_seq: need at least 100 video packets, got " +
        std::to_string(video.size()));
  }
  SeqLocation loc;
  loc.scores.assign(static_cast<std::size_t>(n_positions), 0.0);
  std::vector<std::uint64_t> qualifying(static_cast<std::size_t>(n_positions), 0);
  std::vector<std::uint64_t> pairs(static_cast<std::size_t>(n_positions), 0);
  for (std::size_t i = 0; i + 1 < video.records.size(); ++i) {
    const auto& a = video.records[i].payload;
    const auto& b = video.records[i + 1].payload;
    const std::size_t n = std::min<std::size_t>(
        {a.size(), b.size(), static_cast<std::size_t>(n_positions)});
    for (std::size_t p = 0; p < n; ++p) {
      ++pairs[p];
      if (is_pow2_minus1(static_cast<std::uint8_t>(a[p] ^ b[p]))) {
        ++qualifying[p];
      }
    }
  }
  for (std::size_t p = 0; p < loc.scores.size(); ++p) {
    loc.scores[p] = pairs[p] > 0 ? static_cast<double>(qualifying[p]) /
                                       static_cast<double>(pairs[p])
                                 : 0.0;
  }
  std::size_t winner = 0;
  for (std::size_t p = 1; p < loc.scores.size(); ++p) {
    if (loc.scores[p] > loc.scores[winner]) {
      winner = p;
    }
  }
  double runner_up = 0.0;
  for (std::size_t p = 0; p < loc.scores.size(); ++p) {
    if (p != winner) {
      runner_up = std::max(runner_up, loc.scores[p]);
    }
  }
  if (loc.scores[winner] < winner_min || runner_up > runner_max) {
    throw SeqNotFoundError(
        "locate_seq: no clear counter position (winner " +
        std::to_string(winner + 1) + " scored " +
        std::to_string(loc.scores[winner]) + ", runner-up " +
        std::to_string(runner_up) + "); scores: " + score_table(loc.scores));
  }
  loc.low_position = static_cast<int>(winner) + 1;
  return loc;
}

SeqKeyResult recover_seq_key(const Capture& video, int low_position,
                             double accept_score) {
  if (video.size() < 200) {
    throw InsufficientDataError(
        "recover_seq_key: need at least 200 video packets, got " +
        std::to_string(video.size()));
  }
  if (low_position < 1) {
    throw UsageError("recover_seq_key: invalid low_position");
  }
  const int high_position = low_position - 1;
  const auto lo_idx = static_cast<std::size_t>(low_position - 1);
  const auto hi_idx = static_cast<std::size_t>(high_position - 1);

  // Adjacent pairs in arrival order, restricted to packets covering the
  // field; the raw cipher values feed the origin tie-break.
  std::vector<BytePair> all_pairs;
  std::vector<std::uint16_t> cipher_values;
  {
    const std::size_t need = static_cast<std::size_t>(low_position);
    const UdpRecord* prev = nullptr;
    for (const auto& rec : video.records) {
      if (rec.payload.size() < need) {
        prev = nullptr;
        continue;
      }
      const std::uint8_t hi =
          high_position >= 1 ? rec.payload[hi_idx] : std::uint8_t{0};
      const std::uint8_t lo = rec.payload[lo_idx];
      cipher_values.push_back(static_cast<std::uint16_t>(hi << 8 | lo));
      if (prev != nullptr) {
        const std::uint8_t phi =
            high_position >= 1 ? prev->payload[hi_idx] : std::uint8_t{0};
        all_pairs.push_back(BytePair{phi, prev->payload[lo_idx], hi, lo});
      }
      prev = &rec;
    }
  }
  if (all_pairs.size() < 100) {
    throw InsufficientDataError(
        "recover_seq_key: too few usable adjacent pairs (" +
        std::to_string(all_pairs.size()) + ")");
  }
  const double npairs = static_cast<double>(all_pairs.size());

  SeqKeyResult result;
  result.low_position = low_position;

  if (high_position >= 1) {
    // Scoring all 2^16 keys, decomposed: for pairs whose cipher high bytes
    // match, the decrypted delta does not depend on the high key byte, so
    // those pairs are scored once per low key byte. Only boundary-crossing
    // pairs need the full key. The argmax is identical to the naive sweep.
    std::array<std::uint32_t, 256> same_hi_count{};
    std::vector<BytePair> cross;
    for (const auto& p : all_pairs) {
      if (p.h1 != p.h2) {
        cross.push_back(p);
      }
    }
    for (int kl = 0; kl < 256; ++kl) {
      std::uint32_t c = 0;
      for (const auto& p : all_pairs) {
        if (p.h1 == p.h2) {
          c += static_cast<std::uint32_t>(
              static_cast<int>(p.l2 ^ kl) - static_cast<int>(p.l1 ^ kl) == 1);
        }
      }
      same_hi_count[static_cast<std::size_t>(kl)] = c;
    }

    std::vector<std::uint32_t> counts(0x10000);
    std::uint32_t best_count = 0;
    for (int kh = 0; kh < 256; ++kh) {
      for (int kl = 0; kl < 256; ++kl) {
        std::uint32_t count = same_hi_count[static_cast<std::size_t>(kl)];
        for (const auto& p : cross) {
          const std::uint16_t d1 = static_cast<std::uint16_t>(
              (p.h1 ^ kh) << 8 | (p.l1 ^ kl));
          const std::uint16_t d2 = static_cast<std::uint16_t>(
              (p.h2 ^ kh) << 8 | (p.l2 ^ kl));
          count += static_cast<std::uint32_t>(
              static_cast<std::uint16_t>(d2 - d1) == 1);
        }
        counts[static_cast<std::size_t>(kh << 8 | kl)] = count;
        best_count = std::max(best_count, count);
      }
    }
    const double best_score = best_count / npairs;
    if (best_score >= accept_score) {
      // Key bits above the highest observed carry are not identifiable
      // from unit deltas alone, so several keys can share the top score.
      // Break ties by how well the remaining deltas look like packet
      // loss (small forward gaps rather than wild jumps), then by the
      // hypothesis closest to the counter origin (smallest minimum
      // decrypted value), then by the smallest key.
      std::uint16_t best_key = 0;
      std::uint32_t best_gapish = 0;
      std::uint32_t best_min = 0x10000;
      for (std::uint32_t k = 0; k < 0x10000; ++k) {
        if (counts[k] != best_count) {
          continue;
        }
        std::uint32_t gapish = 0;
        for (const auto& p : all_pairs) {
          const std::uint16_t d1 = static_cast<std::uint16_t>(
              (p.h1 ^ (k >> 8)) << 8 | (p.l1 ^ (k & 0xff)));
          const std::uint16_t d2 = static_cast<std::uint16_t>(
              (p.h2 ^ (k >> 8)) << 8 | (p.l2 ^ (k & 0xff)));
          const std::uint16_t delta = static_cast<std::uint16_t>(d2 - d1);
          gapish += static_cast<std::uint32_t>(delta >= 1 && delta <= 64);
        }
        std::uint32_t min_dec = 0xffff;
        for (std::uint16_t c : cipher_values) {
          min_dec = std::min<std::uint32_t>(min_dec, c ^ k);
        }
        if (gapish > best_gapish ||
            (gapish == best_gapish && min_dec < best_min)) {
          best_gapish = gapish;
          best_min = min_dec;
          best_key = static_cast<std::uint16_t>(k);
        }
      }
      result.high_position = high_position;
      result.width = 2;
      result.key = best_key;
      result.score = counts[result.key] / npairs;
      return result;
    }
  }

  // One-byte counter fallback, same scoring and tie rules mod 256.
  std::array<std::uint32_t, 256> counts8{};
  std::uint32_t best_count = 0;
  for (int kl = 0; kl < 256; ++kl) {
    std::uint32_t count = 0;
    for (const auto& p : all_pairs) {
      count += static_cast<std::uint32_t>(
          static_cast<std::uint8_t>((p.l2 ^ kl) - (p.l1 ^ kl)) == 1);
    }
    counts8[static_cast<std::size_t>(kl)] = count;
    best_count = std::max(best_count, count);
  }
  std::uint8_t best_key = 0;
  std::uint32_t best_gapish = 0;
  std::uint32_t best_min = 0x100;
  for (int kl = 0; kl < 256; ++kl) {
    if (counts8[static_cast<std::size_t>(kl)] != best_count) {
      continue;
    }
    std::uint32_t gapish = 0;
    for (const auto& p : all_pairs) {
      const std::uint8_t delta =
          static_cast<std::uint8_t>((p.l2 ^ kl) - (p.l1 ^ kl));
      gapish += static_cast<std::uint32_t>(delta >= 1 && delta <= 64);
    }
    std::uint32_t min_dec = 0xff;
    for (std::uint16_t c : cipher_values) {
      min_dec = std::min<std::uint32_t>(min_dec, (c & 0xff) ^ kl);
    }
    if (gapish > best_gapish || (gapish == best_gapish && min_dec < best_min)) {
      best_gapish = gapish;
      best_min = min_dec;
      best_key = static_cast<std::uint8_t>(kl);
    }
  }
  const double best_score =
      counts8[static_cast<std::size_t>(best_key)] / npairs;
  if (best_score < accept_score) {
    throw KeyNotFoundError(
        "recover_seq_key: no key reaches the acceptance score (best " +
        std::to_string(best_score) + " < " + std::to_string(accept_score) +
        ")");
  }
  result.high_position = low_position;
  result.width = 1;
  result.key = best_key;
  result.score = best_score;
  return result;
}

FieldMap discover(const CalibrationSet& calibration, int n_positions,
                  const Thresholds& thresholds) {
  std::set<double> distinct_rates;
  for (const auto& [rate, capture] : calibration.entries) {
    distinct_rates.insert(rate);
  }
  if (distinct_rates.size() < 3) {
    throw UsageError("discover: need at least 3 distinct loss rates, got " +
                     std::to_string(distinct_rates.size()));
  }
  std::size_t base_idx = 0;
  for (std::size_t i = 1; i < calibration.entries.size(); ++i) {
    if (calibration.entries[i].first < calibration.entries[base_idx].first) {
      base_idx = i;
    }
  }
  const Capture& base = calibration.entries[base_idx].second;

  const auto base_profile = byte_frequency(base, n_positions);
  FieldMap map;
  map.constant_positions = find_constant_fields(base_profile);

  const auto pt = locate_pt(calibration, n_positions, map.constant_positions,
                            thresholds.pt_r_accept, thresholds.pt_min_span);
  map.pt_position = pt.position;
  map.video_pt_cipher = pt.video_pt_cipher;
  map.correlations = pt.correlations;

  auto [video, rest] = classify_packets(base, pt.position, pt.video_pt_cipher);
  const auto seq_loc = locate_seq(video, n_positions,
                                  thresholds.seq_winner_min,
                                  thresholds.seq_runner_max);
  map.xor_scores = seq_loc.scores;

  const auto key =
      recover_seq_key(video, seq_loc.low_position, thresholds.key_accept);
  map.seq_high_position = key.high_position;
  map.seq_low_position = key.low_position;
  map.seq_width = key.width;
  map.seq_key = key.key;
  return map;
}

FieldMap rekey(const Capture& flow, const FieldMap& layout,
               const Thresholds& thresholds) {
  if (flow.empty()) {
    throw EmptyInputError("rekey: empty flow");
  }
  FieldMap map = layout;
  const auto profile = byte_frequency(flow, layout.pt_position);
  map.video_pt_cipher =
      profile.positions[static_cast<std::size_t>(layout.pt_position - 1)]
          .modal_value;
  auto [video, rest] =
      classify_packets(flow, map.pt_position, map.video_pt_cipher);
  const auto key =
      recover_seq_key(video, layout.seq_low_position, thresholds.key_accept);
  map.seq_high_position = key.high_position;
  map.seq_low_position = key.low_position;
  map.seq_width = key.width;
  map.seq_key = key.key;
  return map;
}

std::vector<MediaClass> classify_media(const Capture& flow,
                                       const FieldMap& map) {
  std::vector<MediaClass> classes(flow.size(), MediaClass::Other);
  if (flow.empty() || map.pt_position < 1) {
    return classes;
  }
  std::vector<std::pair<std::size_t, std::uint8_t>> filter;
  if (!map.constant_positions.empty()) {
    const int max_pos = *map.constant_positions.rbegin();
    const auto profile = byte_frequency(flow, max_pos);
    for (int pos : map.constant_positions) {
      filter.emplace_back(
          static_cast<std::size_t>(pos - 1),
          profile.positions[static_cast<std::size_t>(pos - 1)].modal_value);
    }
  }
  const auto pt_idx = static_cast<std::size_t>(map.pt_position - 1);
  for (std::size_t i = 0; i < flow.records.size(); ++i) {
    const auto& payload = flow.records[i].payload;
    if (payload.size() <= pt_idx) {
      continue;
    }
    bool media = true;
    for (const auto& [idx, value] : filter) {
      if (payload.size() <= idx || payload[idx] != value) {
        media = false;
        break;
      }
    }
    if (!media) {
      continue;
    }
    classes[i] = payload[pt_idx] == map.video_pt_cipher ? MediaClass::Video
                                                        : MediaClass::Fec;
  }
  return classes;
}

Capture video_of(const Capture& flow, const FieldMap& map) {
  const auto classes = classify_media(flow, map);
  Capture video;
  video.epoch_us = flow.epoch_us;
  for (std::size_t i = 0; i < flow.records.size(); ++i) {
    if (classes[i] == MediaClass::Video) {
      video.records.push_back(flow.records[i]);
    }
  }
  return video;
}

std::vector<std::uint16_t> decrypt_seqs(const Capture& video,
                                        const FieldMap& map) {
  std::vector<std::uint16_t> seqs;
  seqs.reserve(video.size());
  const auto lo_idx = static_cast<std::size_t>(map.seq_low_position - 1);
  const auto hi_idx = static_cast<std::size_t>(map.seq_high_position - 1);
  for (const auto& rec : video.records) {
    if (rec.payload.size() <= lo_idx || rec.payload.size() <= hi_idx) {
      continue;
    }
    if (map.seq_width == 2) {
      seqs.push_back(static_cast<std::uint16_t>(
          ((rec.payload[hi_idx] ^ (map.seq_key >> 8)) << 8) |
          (rec.payload[lo_idx] ^ (map.seq_key & 0xff))));
    } else {
      seqs.push_back(static_cast<std::uint16_t>(rec.payload[lo_idx] ^
                                                (map.seq_key & 0xff)));
    }
  }
  return seqs;
}

std::string to_json(const FieldMap& map) {
  nlohmann::json j;
  j["constant_positions"] = map.constant_positions;
  j["pt_position"] = map.pt_position;
  j["video_pt_cipher"] = map.video_pt_cipher;
  j["seq_positions"] = {map.seq_high_position, map.seq_low_position};
  j["seq_width"] = map.seq_width;
  j["seq_key"] = map.seq_key;
  j["diagnostics"] = {{"correlations", map.correlations},
                      {"xor_scores", map.xor_scores}};
  return j.dump(2);
}

FieldMap field_map_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("field map JSON parse error: ") + e.what());
  }
  try {
    FieldMap map;
    for (int p : j.at("constant_positions")) {
      map.constant_positions.insert(p);
    }
    map.pt_position = j.at("pt_position").get<int>();
    map.video_pt_cipher = j.at("video_pt_cipher").get<std::uint8_t>();
    const auto& seq = j.at("seq_positions");
    map.seq_high_position = seq.at(0).get<int>();
    map.seq_low_position = seq.at(1).get<int>();
    map.seq_width = j.at("seq_width").get<int>();
    map.seq_key = j.at("seq_key").get<std::uint16_t>();
    if (j.contains("diagnostics")) {
      map.correlations =
          j["diagnostics"].value("correlations", std::vector<double>{});
      map.xor_scores =
          j["diagnostics"].value("xor_scores", std::vector<double>{});
    }
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("field map JSON schema error: ") + e.what());
  }
}

void save_field_map(const FieldMap& map, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw DataError("cannot open for writing: " + path.string());
  }
  f << to_json(map) << '\n';
}

FieldMap load_field_map(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw DataError("cannot open field map file: " + path.string());
  }
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return field_map_from_json(text);
}

}  // namespace dai::decipher
