#include "dai/traffic.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dai {

namespace {

constexpr std::uint32_t kMagicUsec = 0xa1b2c3d4;
constexpr std::uint32_t kMagicUsecSwapped = 0xd4c3b2a1;
constexpr std::size_t kMaxUdpPayload = 65507;

// Synthetic link-layer endpoints for regenerated frames.
constexpr std::array<std::uint8_t, 6> kDstMac = {0x02, 0, 0, 0, 0, 0x02};
constexpr std::array<std::uint8_t, 6> kSrcMac = {0x02, 0, 0, 0, 0, 0x01};

void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32le(std::string& out, std::uint32_t v) {
  put_u16le(out, static_cast<std::uint16_t>(v & 0xffff));
  put_u16le(out, static_cast<std::uint16_t>(v >> 16));
}

void put_u16be(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_u32be(std::string& out, std::uint32_t v) {
  put_u16be(out, static_cast<std::uint16_t>(v >> 16));
  put_u16be(out, static_cast<std::uint16_t>(v & 0xffff));
}

std::uint16_t get_u16be(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] << 8 | p[1]);
}

std::uint32_t get_u32(const std::uint8_t* p, bool swapped) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  if (swapped) {
    v = __builtin_bswap32(v);
  }
  return v;
}

std::uint16_t ipv4_checksum(const std::uint8_t* hdr, std::size_t len) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < len; i += 2) {
    sum += static_cast<std::uint32_t>(hdr[i] << 8 | hdr[i + 1]);
  }
  while (sum >> 16) {
    sum = (sum & 0xffff) + (sum >> 16);
  }
  return static_cast<std::uint16_t>(~sum);
}

}  // namespace

std::string ipv4_to_string(Ipv4 ip) {
  std::ostringstream os;
  os << (ip >> 24) << '.' << ((ip >> 16) & 0xff) << '.' << ((ip >> 8) & 0xff)
     << '.' << (ip & 0xff);
  return os.str();
}

Ipv4 ipv4_from_string(const std::string& dotted) {
  Ipv4 ip = 0;
  int octet = 0;
  int parts = 0;
  bool have_digit = false;
  for (char c : dotted) {
    if (c >= '0' && c <= '9') {
      octet = octet * 10 + (c - '0');
      have_digit = true;
      if (octet > 255) {
        throw DataError("invalid IPv4 address: " + dotted);
      }
    } else if (c == '.') {
      if (!have_digit || parts == 3) {
        throw DataError("invalid IPv4 address: " + dotted);
      }
      ip = ip << 8 | static_cast<Ipv4>(octet);
      octet = 0;
      have_digit = false;
      ++parts;
    } else {
      throw DataError("invalid IPv4 address: " + dotted);
    }
  }
  if (!have_digit || parts != 3) {
    throw DataError("invalid IPv4 address: " + dotted);
  }
  return ip << 8 | static_cast<Ipv4>(octet);
}

std::string FlowKey::to_string() const {
  return ipv4_to_string(src_ip) + ":" + std::to_string(src_port) + "->" +
         ipv4_to_string(dst_ip) + ":" + std::to_string(dst_port);
}

std::uint64_t Capture::total_payload_bytes() const {
  std::uint64_t total = 0;
  for (const auto& r : records) {
    total += r.payload.size();
  }
  return total;
}

ReadResult read_pcap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open pcap file: " + path.string());
  }
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(data.data());
  const std::size_t size = data.size();

  if (size < 24) {
    throw UnsupportedFormatError("not a classic pcap file (too short): " +
                                 path.string());
  }
  std::uint32_t magic = get_u32(bytes, false);
  bool swapped = false;
  if (magic == kMagicUsec) {
    swapped = false;
  } else if (magic == kMagicUsecSwapped) {
    swapped = true;
  } else {
    throw UnsupportedFormatError(
        "not a classic microsecond pcap file (bad magic): " + path.string());
  }
  std::uint32_t linktype = get_u32(bytes + 20, swapped);
  if (linktype != 1) {
    throw UnsupportedFormatError("unsupported pcap linktype " +
                                 std::to_string(linktype) + " (want Ethernet)");
  }

  ReadResult result;
  std::size_t off = 24;
  while (off < size) {
    if (size - off < 16) {
      throw TruncatedCaptureError("truncated pcap record header", off);
    }
    std::uint32_t ts_sec = get_u32(bytes + off, swapped);
    std::uint32_t ts_usec = get_u32(bytes + off + 4, swapped);
    std::uint32_t incl_len = get_u32(bytes + off + 8, swapped);
    off += 16;
    if (size - off < incl_len) {
      throw TruncatedCaptureError("truncated pcap record body", off);
    }
    const std::uint8_t* frame = bytes + off;
    off += incl_len;

    // Ethernet + IPv4 + UDP, anything else is counted and skipped.
    if (incl_len < 14 + 20 + 8) {
      ++result.skipped;
      continue;
    }
    if (get_u16be(frame + 12) != 0x0800) {
      ++result.skipped;
      continue;
    }
    const std::uint8_t* ip = frame + 14;
    std::size_t ip_avail = incl_len - 14;
    if ((ip[0] >> 4) != 4) {
      ++result.skipped;
      continue;
    }
    std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
    if (ihl < 20 || ip_avail < ihl + 8) {
      ++result.skipped;
      continue;
    }
    if (ip[9] != 17) {  // not UDP
      ++result.skipped;
      continue;
    }
    std::uint16_t frag = get_u16be(ip + 6);
    if ((frag & 0x2000) != 0 || (frag & 0x1fff) != 0) {  // fragmented
      ++result.skipped;
      continue;
    }
    const std::uint8_t* udp = ip + ihl;
    std::uint16_t udp_len = get_u16be(udp + 4);
    if (udp_len < 8) {
      ++result.skipped;
      continue;
    }
    std::size_t payload_len =
        std::min<std::size_t>(udp_len - 8, ip_avail - ihl - 8);
    if (payload_len == 0 || payload_len > kMaxUdpPayload) {
      ++result.skipped;
      continue;
    }

    UdpRecord rec;
    rec.ts_us = static_cast<std::int64_t>(ts_sec) * 1'000'000 + ts_usec;
    rec.flow.src_ip = (ip[12] << 24) | (ip[13] << 16) | (ip[14] << 8) | ip[15];
    rec.flow.dst_ip = (ip[16] << 24) | (ip[17] << 16) | (ip[18] << 8) | ip[19];
    rec.flow.src_port = get_u16be(udp);
    rec.flow.dst_port = get_u16be(udp + 2);
    rec.payload.assign(udp + 8, udp + 8 + payload_len);
    result.capture.records.push_back(std::move(rec));
  }

  std::stable_sort(result.capture.records.begin(),
                   result.capture.records.end(),
                   [](const UdpRecord& a, const UdpRecord& b) {
                     return a.ts_us < b.ts_us;
                   });
  result.capture.epoch_us = result.capture.records.empty()
                                ? 0
                                : result.capture.records.front().ts_us;
  return result;
}

void write_pcap(const Capture& capture, const std::filesystem::path& path) {
  if (capture.empty()) {
    throw UsageError("write_pcap: capture is empty");
  }
  std::string out;
  out.reserve(24 + capture.records.size() * 80);
  put_u32le(out, kMagicUsec);
  put_u16le(out, 2);       // version major
  put_u16le(out, 4);       // version minor
  put_u32le(out, 0);       // thiszone
  put_u32le(out, 0);       // sigfigs
  put_u32le(out, 262144);  // snaplen, large enough for a 65507-byte payload
  put_u32le(out, 1);       // linktype: Ethernet

  for (const auto& rec : capture.records) {
    if (rec.payload.empty() || rec.payload.size() > kMaxUdpPayload) {
      throw DataError("write_pcap: payload length out of range: " +
                      std::to_string(rec.payload.size()));
    }
    if (rec.ts_us < 0) {
      throw DataError("write_pcap: negative timestamp");
    }
    const std::size_t frame_len = 14 + 20 + 8 + rec.payload.size();
    put_u32le(out, static_cast<std::uint32_t>(rec.ts_us / 1'000'000));
    put_u32le(out, static_cast<std::uint32_t>(rec.ts_us % 1'000'000));
    put_u32le(out, static_cast<std::uint32_t>(frame_len));
    put_u32le(out, static_cast<std::uint32_t>(frame_len));

    out.append(reinterpret_cast<const char*>(kDstMac.data()), 6);
    out.append(reinterpret_cast<const char*>(kSrcMac.data()), 6);
    put_u16be(out, 0x0800);

    std::string ip;
    ip.push_back(0x45);
    ip.push_back(0);
    put_u16be(ip, static_cast<std::uint16_t>(20 + 8 + rec.payload.size()));
    put_u16be(ip, 0);  // identification
    put_u16be(ip, 0);  // flags + fragment offset
    ip.push_back(64);  // TTL
    ip.push_back(17);  // UDP
    put_u16be(ip, 0);  // checksum placeholder
    put_u32be(ip, rec.flow.src_ip);
    put_u32be(ip, rec.flow.dst_ip);
    std::uint16_t csum =
        ipv4_checksum(reinterpret_cast<const std::uint8_t*>(ip.data()), 20);
    ip[10] = static_cast<char>(csum >> 8);
    ip[11] = static_cast<char>(csum & 0xff);
    out += ip;

    put_u16be(out, rec.flow.src_port);
    put_u16be(out, rec.flow.dst_port);
    put_u16be(out, static_cast<std::uint16_t>(8 + rec.payload.size()));
    put_u16be(out, 0);  // UDP checksum unset
    out.append(reinterpret_cast<const char*>(rec.payload.data()),
               rec.payload.size());
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw DataError("cannot open for writing: " + path.string());
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw DataError("write failed: " + path.string());
  }
}

std::map<FlowKey, Capture> split_flows(const Capture& capture) {
  std::map<FlowKey, Capture> flows;
  for (const auto& rec : capture.records) {
    auto& sub = flows[rec.flow];
    if (sub.records.empty()) {
      sub.epoch_us = rec.ts_us;
    }
    sub.records.push_back(rec);
  }
  return flows;
}

FlowKey select_media_flow(const std::map<FlowKey, Capture>& flows) {
  if (flows.empty()) {
    throw NoFlowsError("select_media_flow: no flows in capture");
  }
  const FlowKey* best = nullptr;
  std::uint64_t best_bytes = 0;
  for (const auto& [key, sub] : flows) {
    std::uint64_t bytes = sub.total_payload_bytes();
    if (best == nullptr || bytes > best_bytes) {
      best = &key;
      best_bytes = bytes;
    }
  }
  return *best;
}

}  // namespace dai
