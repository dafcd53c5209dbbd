#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

namespace specpool {

// FNV-1a, used for stage stamps, artifact content hashes and CCLB ids.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(const std::string& s,
                      std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t value);
std::uint64_t hash_file(const std::filesystem::path& path);

// splitmix64. The only source of randomness inside the library, so pipeline
// outputs depend on the manifest seed alone.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  double unit();      // [0, 1)
  double symmetric(); // [-1, 1)
  std::uint64_t below(std::uint64_t n);

private:
  std::uint64_t state_;
};

// Runs fn(0..count-1) on at most `jobs` threads. Exceptions are collected and
// the one with the smallest index is rethrown after all workers join.
void parallel_for(int count, int jobs, const std::function<void(int)>& fn);

// Write-temp-then-rename so partially written artifacts are never visible.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

}  // namespace specpool
