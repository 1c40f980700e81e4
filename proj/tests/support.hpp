#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "tempest/bytestream.hpp"

namespace tempest::testing {

inline std::filesystem::path fixture_dir() { return TEMPEST_FIXTURE_DIR; }

inline std::vector<std::filesystem::path> fixtures(const std::string& subdir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(fixture_dir() / subdir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline Bytes bytes_of(std::initializer_list<int> values) {
  Bytes out;
  for (int v : values) out.push_back(static_cast<std::uint8_t>(v));
  return out;
}

inline Bytes ascii(const std::string& s) { return Bytes(s.begin(), s.end()); }

inline Bytes concat(std::initializer_list<Bytes> parts) {
  Bytes out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace tempest::testing

namespace tempest::testing {

// ffmpeg configured for the test run, empty when none was found.
inline std::string ffmpeg_path() {
  const char* env = std::getenv("TEMPEST_FFMPEG");
  return env != nullptr ? env : "";
}

}  // namespace tempest::testing
