#include "dai/traffic.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

using namespace dai;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
  return fs::temp_directory_path() / name;
}

void put32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put16be(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v >> 8));
  s.push_back(static_cast<char>(v & 0xff));
}

std::string pcap_global_header() {
  std::string s;
  put32(s, 0xa1b2c3d4);
  s.push_back(2);
  s.push_back(0);
  s.push_back(4);
  s.push_back(0);
  put32(s, 0);
  put32(s, 0);
  put32(s, 65535);
  put32(s, 1);
  return s;
}

// Hand-built Ethernet/IPv4 frame with the given L4 protocol.
std::string raw_frame(std::uint8_t ip_proto, const std::string& l4_bytes) {
  std::string f(12, '\x02');
  put16be(f, 0x0800);
  std::string ip;
  ip.push_back(0x45);
  ip.push_back(0);
  put16be(ip, static_cast<std::uint16_t>(20 + l4_bytes.size()));
  put16be(ip, 0);
  put16be(ip, 0);
  ip.push_back(64);
  ip.push_back(static_cast<char>(ip_proto));
  put16be(ip, 0);
  put32(ip, 0);  // src 0.0.0... fine for fixture
  put32(ip, 0);
  f += ip;
  f += l4_bytes;
  return f;
}

std::string udp_l4(std::uint16_t sport, std::uint16_t dport,
                   const std::string& payload) {
  std::string s;
  put16be(s, sport);
  put16be(s, dport);
  put16be(s, static_cast<std::uint16_t>(8 + payload.size()));
  put16be(s, 0);
  s += payload;
  return s;
}

void append_record(std::string& file, std::uint32_t sec, std::uint32_t usec,
                   const std::string& frame) {
  put32(file, sec);
  put32(file, usec);
  put32(file, static_cast<std::uint32_t>(frame.size()));
  put32(file, static_cast<std::uint32_t>(frame.size()));
  file += frame;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

UdpRecord make_record(std::int64_t ts, std::uint16_t sport,
                      std::uint16_t dport, std::vector<std::uint8_t> payload) {
  UdpRecord r;
  r.ts_us = ts;
  r.flow = FlowKey{ipv4_from_string("10.0.0.2"), ipv4_from_string("10.0.0.1"),
                   sport, dport};
  r.payload = std::move(payload);
  return r;
}

}  // namespace

TEST_CASE("pcap round trip preserves three records byte-exactly") {
  Capture c;
  c.records.push_back(make_record(100, 1000, 2000, {0x41, 0x42}));
  c.records.push_back(make_record(2'000'000, 1000, 2000, {1, 2, 3, 4, 5}));
  c.records.push_back(make_record(2'000'001, 1001, 2000, {0xff}));
  const auto path = temp_file("dai_rt3.pcap");
  write_pcap(c, path);
  const auto rr = read_pcap(path);
  REQUIRE(rr.capture.size() == 3);
  CHECK(rr.skipped == 0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rr.capture.records[i].ts_us == c.records[i].ts_us);
    CHECK(rr.capture.records[i].flow == c.records[i].flow);
    CHECK(rr.capture.records[i].payload == c.records[i].payload);
  }
  fs::remove(path);
}

TEST_CASE("read_pcap keeps UDP frames and counts skipped ones") {
  std::string file = pcap_global_header();
  append_record(file, 0, 10, raw_frame(17, udp_l4(5000, 6000, "AB")));
  append_record(file, 0, 20, raw_frame(6, udp_l4(5000, 6000, "notudp")));
  append_record(file, 0, 30, raw_frame(17, udp_l4(5001, 6000, "C")));
  const auto path = temp_file("dai_mixed.pcap");
  write_bytes(path, file);
  const auto rr = read_pcap(path);
  CHECK(rr.capture.size() == 2);
  CHECK(rr.skipped == 1);
  CHECK(rr.capture.records[0].payload ==
        std::vector<std::uint8_t>{'A', 'B'});
  fs::remove(path);
}

TEST_CASE("read_pcap rejects an empty file as unsupported") {
  const auto path = temp_file("dai_empty.pcap");
  write_bytes(path, "");
  CHECK_THROWS_AS(read_pcap(path), UnsupportedFormatError);
  fs::remove(path);
}

TEST_CASE("read_pcap rejects a bad magic") {
  const auto path = temp_file("dai_badmagic.pcap");
  std::string file = pcap_global_header();
  file[0] = 0x4d;  // nanosecond-flavor magic byte
  write_bytes(path, file);
  CHECK_THROWS_AS(read_pcap(path), UnsupportedFormatError);
  fs::remove(path);
}

TEST_CASE("read_pcap names the offset of a truncated record") {
  std::string file = pcap_global_header();
  append_record(file, 0, 10, raw_frame(17, udp_l4(5000, 6000, "AB")));
  file.resize(file.size() - 10);  // cut into the frame body
  const auto path = temp_file("dai_trunc.pcap");
  write_bytes(path, file);
  try {
    read_pcap(path);
    FAIL("expected TruncatedCaptureError");
  } catch (const TruncatedCaptureError& e) {
    CHECK(e.offset == 40);  // global header + record header
  }
  fs::remove(path);
}

TEST_CASE("maximum payload survives the round trip") {
  Capture c;
  std::vector<std::uint8_t> payload(65507);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    payload[i] = static_cast<std::uint8_t>(i * 31);
  }
  c.records.push_back(make_record(5, 1, 2, payload));
  const auto path = temp_file("dai_max.pcap");
  write_pcap(c, path);
  const auto rr = read_pcap(path);
  REQUIRE(rr.capture.size() == 1);
  CHECK(rr.capture.records[0].payload == payload);
  fs::remove(path);
}

TEST_CASE("round trip identity on randomly generated captures") {
  std::mt19937 rng(7);
  const auto path = temp_file("dai_prop.pcap");
  for (int iter = 0; iter < 20; ++iter) {
    Capture c;
    std::int64_t ts = 0;
    const int n = iter == 0 ? 10000 : 1 + static_cast<int>(rng() % 200);
    for (int i = 0; i < n; ++i) {
      ts += rng() % 5000;
      std::vector<std::uint8_t> payload(1 + rng() % 1400);
      for (auto& b : payload) {
        b = static_cast<std::uint8_t>(rng());
      }
      UdpRecord r;
      r.ts_us = ts;
      r.flow =
          FlowKey{static_cast<Ipv4>(rng()), static_cast<Ipv4>(rng()),
                  static_cast<std::uint16_t>(rng()),
                  static_cast<std::uint16_t>(rng())};
      r.payload = std::move(payload);
      c.records.push_back(std::move(r));
    }
    write_pcap(c, path);
    const auto rr = read_pcap(path);
    REQUIRE(rr.capture.size() == c.size());
    bool equal = true;
    for (std::size_t i = 0; i < c.size(); ++i) {
      equal = equal && rr.capture.records[i].ts_us == c.records[i].ts_us &&
              rr.capture.records[i].flow == c.records[i].flow &&
              rr.capture.records[i].payload == c.records[i].payload;
    }
    CHECK(equal);
  }
  fs::remove(path);
}

TEST_CASE("split_flows partitions the capture and keeps order") {
  Capture c;
  c.records.push_back(make_record(1, 10, 20, {1}));
  c.records.push_back(make_record(2, 11, 20, {2}));
  c.records.push_back(make_record(3, 10, 20, {3}));
  c.records.push_back(make_record(4, 11, 20, {4}));
  const auto flows = split_flows(c);
  REQUIRE(flows.size() == 2);
  std::size_t total = 0;
  for (const auto& [key, sub] : flows) {
    total += sub.size();
  }
  CHECK(total == c.size());
  const FlowKey a{ipv4_from_string("10.0.0.2"), ipv4_from_string("10.0.0.1"),
                  10, 20};
  CHECK(flows.at(a).records[0].payload == std::vector<std::uint8_t>{1});
  CHECK(flows.at(a).records[1].payload == std::vector<std::uint8_t>{3});

  CHECK(split_flows(Capture{}).empty());
}

TEST_CASE("select_media_flow picks the biggest flow, ties lexicographic") {
  Capture c;
  c.records.push_back(make_record(1, 10, 20, std::vector<std::uint8_t>(500)));
  c.records.push_back(make_record(2, 11, 20, std::vector<std::uint8_t>(40)));
  auto flows = split_flows(c);
  const FlowKey big{ipv4_from_string("10.0.0.2"), ipv4_from_string("10.0.0.1"),
                    10, 20};
  CHECK(select_media_flow(flows) == big);

  // Equal sizes: the lexicographically smaller key wins.
  Capture tie;
  tie.records.push_back(make_record(1, 9, 20, std::vector<std::uint8_t>(100)));
  tie.records.push_back(make_record(2, 12, 20, std::vector<std::uint8_t>(100)));
  const FlowKey smaller{ipv4_from_string("10.0.0.2"),
                        ipv4_from_string("10.0.0.1"), 9, 20};
  CHECK(select_media_flow(split_flows(tie)) == smaller);

  CHECK_THROWS_AS(select_media_flow({}), NoFlowsError);
}

TEST_CASE("select_media_flow ignores record order inside flows") {
  Capture a, b;
  for (int i = 0; i < 10; ++i) {
    a.records.push_back(make_record(i, 10, 20, std::vector<std::uint8_t>(
                                                   static_cast<std::size_t>(
                                                       10 + i))));
    a.records.push_back(make_record(i, 11, 20, std::vector<std::uint8_t>(5)));
  }
  b.records = a.records;
  std::reverse(b.records.begin(), b.records.end());
  CHECK(select_media_flow(split_flows(a)) ==
        select_media_flow(split_flows(b)));
}

TEST_CASE("write_pcap refuses an empty capture") {
  CHECK_THROWS_AS(write_pcap(Capture{}, temp_file("dai_none.pcap")),
                  UsageError);
}

TEST_CASE("write_pcap surfaces an unwritable path") {
  Capture c;
  c.records.push_back(make_record(0, 1, 2, {0x11}));
  CHECK_THROWS_AS(write_pcap(c, "/nonexistent_dir/x/out.pcap"), DataError);
}
