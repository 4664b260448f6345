#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dai/errors.hpp"

namespace dai {

// IPv4 address, host byte order.
using Ipv4 = std::uint32_t;

std::string ipv4_to_string(Ipv4 ip);
Ipv4 ipv4_from_string(const std::string& dotted);

// Directional UDP 5-tuple; protocol is implicitly UDP, and (A->B) and
// (B->A) are distinct flows. Ordering is lexicographic over the fields,
// which is the deterministic tie-break used by select_media_flow.
struct FlowKey {
  Ipv4 src_ip = 0;
  Ipv4 dst_ip = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;

  auto operator<=>(const FlowKey&) const = default;
  std::string to_string() const;
};

// One captured UDP datagram. Payload length is 1..65507 bytes.
struct UdpRecord {
  std::int64_t ts_us = 0;  // microseconds in the capture's time base
  FlowKey flow;
  std::vector<std::uint8_t> payload;
};

// An ordered capture: records are kept sorted by ts_us (stable on load).
struct Capture {
  std::vector<UdpRecord> records;
  std::int64_t epoch_us = 0;  // time of the earliest record

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
  std::uint64_t total_payload_bytes() const;
};

struct ReadResult {
  Capture capture;
  std::size_t skipped = 0;  // frames that were not UDP-over-IPv4
};

// Classic pcap only (magic 0xa1b2c3d4 native or byte-swapped, microsecond
// timestamps, linktype 1). Non-UDP frames are skipped and counted.
ReadResult read_pcap(const std::filesystem::path& path);

// Writes classic pcap, linktype Ethernet with fixed synthetic MACs and
// regenerated IPv4/UDP headers. read_pcap(write_pcap(c)) is the identity
// on (ts_us, FlowKey, payload).
void write_pcap(const Capture& capture, const std::filesystem::path& path);

// Partitions a capture by flow, preserving per-flow record order.
std::map<FlowKey, Capture> split_flows(const Capture& capture);

// The flow with the largest total payload byte count; ties go to the
// lexicographically smallest FlowKey.
FlowKey select_media_flow(const std::map<FlowKey, Capture>& flows);

}  // namespace dai
