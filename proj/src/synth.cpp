#include "tempest/synth.hpp"

#include <random>
#include <string>

#include "tempest/errors.hpp"
#include "tempest/harness.hpp"
#include "tempest/mp3.hpp"
#include "tempest/ogg_opus.hpp"

namespace tempest::synth {

ByteStream mp3_pattern_stream(int frame_count, int bitrate_bps, int samplerate_hz, std::uint8_t low,
                              std::uint8_t high, std::uint64_t seed) {
  if (frame_count < 1) throw ConfigError("frame_count must be >= 1");
  if (low > high) throw ConfigError("empty payload byte range");
  const auto header = mp3::encode_header(bitrate_bps, samplerate_hz, 0);
  const std::size_t length = mp3::parse_header(header)->frame_length();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(low, high);
  ByteStream s;
  s.format = FormatKind::kMp3;
  for (int f = 0; f < frame_count; ++f) {
    s.bytes.insert(s.bytes.end(), header.begin(), header.end());
    for (std::size_t i = 4; i < length; ++i) s.bytes.push_back(static_cast<std::uint8_t>(byte(rng)));
  }
  return s;
}

ByteStream opus_stream(int packet_count, std::uint64_t seed) {
  if (packet_count < 1) throw ConfigError("packet_count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(20, 300);
  std::uniform_int_distribution<int> byte(0, 255);
  const std::uint32_t serial = static_cast<std::uint32_t>(rng());

  const Bytes head = {'O', 'p', 'u', 's', 'H', 'e', 'a', 'd', 1, 1, 0x38, 0x01, 0x80, 0xBB, 0, 0, 0, 0, 0};
  const Bytes tags = {'O', 'p', 'u', 's', 'T', 'a', 'g', 's', 0, 0, 0, 0, 0, 0, 0, 0};
  ByteStream s;
  s.format = FormatKind::kOpusOgg;
  std::uint32_t sequence = 0;
  const auto append = [&](const opus::PageSpec& spec) {
    const Bytes page = opus::build_page(spec);
    s.bytes.insert(s.bytes.end(), page.begin(), page.end());
  };
  append({0x02, 0, serial, sequence++, opus::lacing_for(head.size()), head});
  append({0x00, 0, serial, sequence++, opus::lacing_for(tags.size()), tags});

  std::uint64_t granule = 0;
  for (int first = 0; first < packet_count; first += 4) {
    opus::PageSpec page;
    page.serial = serial;
    page.sequence = sequence++;
    for (int p = first; p < std::min(first + 4, packet_count); ++p) {
      Bytes packet(static_cast<std::size_t>(size(rng)));
      for (auto& b : packet) b = static_cast<std::uint8_t>(byte(rng));
      packet[0] = 31 << 3;  // CELT fullband 20 ms, one frame
      const auto lacing = opus::lacing_for(packet.size());
      page.lacing.insert(page.lacing.end(), lacing.begin(), lacing.end());
      page.body.insert(page.body.end(), packet.begin(), packet.end());
      granule += 960;
    }
    page.granule = granule;
    if (first + 4 >= packet_count) page.header_type = 0x04;
    append(page);
  }
  return s;
}

ByteStream jpeg_stream(int restart_count, std::uint64_t seed) {
  if (restart_count < 0) throw ConfigError("restart_count must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> run(40, 200);
  ByteStream s;
  s.format = FormatKind::kJpeg;
  s.bytes = {0xFF, 0xD8,
             // SOF0: 8-bit, 16x16, one component
             0xFF, 0xC0, 0x00, 0x0B, 0x08, 0x00, 0x10, 0x00, 0x10, 0x01, 0x01, 0x11, 0x00,
             // DRI
             0xFF, 0xDD, 0x00, 0x04, 0x00, 0x01,
             // SOS: one component
             0xFF, 0xDA, 0x00, 0x08, 0x01, 0x01, 0x00, 0x00, 0x3F, 0x00};
  for (int interval = 0; interval <= restart_count; ++interval) {
    const int n = run(rng);
    for (int i = 0; i < n; ++i) {
      const auto b = static_cast<std::uint8_t>(byte(rng));
      s.bytes.push_back(b);
      if (b == 0xFF) s.bytes.push_back(0x00);
    }
    if (interval < restart_count) {
      s.bytes.push_back(0xFF);
      s.bytes.push_back(static_cast<std::uint8_t>(0xD0 + interval % 8));
    }
  }
  s.bytes.push_back(0xFF);
  s.bytes.push_back(0xD9);
  return s;
}

std::filesystem::path write_mp3_dataset(const std::filesystem::path& dir, int count, int frames_per_file,
                                        std::uint64_t seed) {
  if (count < 2) throw ConfigError("a dataset needs at least two files");
  std::filesystem::create_directories(dir);
  harness::Manifest manifest;
  manifest.num_classes = 2;
  manifest.base_dir = dir;
  for (int i = 0; i < count; ++i) {
    const int cls = i % 2;
    const std::string name = "item" + std::to_string(i) + "_class" + std::to_string(cls) + ".mp3";
    const ByteStream s = mp3_pattern_stream(frames_per_file, 32000, 32000, cls == 0 ? 0 : 128, cls == 0 ? 127 : 255,
                                            seed * 1000003ull + static_cast<std::uint64_t>(i));
    save_bytes(dir / name, s.bytes);
    manifest.entries.push_back({name, {cls}, (i / 2) % 4 == 3 ? "eval" : "train", i % 5 + 1});
  }
  const auto path = dir / "manifest.jsonl";
  harness::save_manifest(path, manifest);
  return path;
}

}  // namespace tempest::synth
