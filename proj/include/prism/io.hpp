#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "prism/tensor.hpp"

namespace prism::io {

// Test-harness hook: observes every file path opened for reading.
void set_open_observer(std::function<void(const std::string&)> observer);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const void* data, size_t size);

// ---- binary PGM (P5), maxval 65535, most-significant byte first ----

struct PgmImage {
  int height = 0;
  int width = 0;
  std::vector<uint16_t> values;
};

void write_pgm16(const std::filesystem::path& path, const uint16_t* values, int height, int width);
PgmImage read_pgm16(const std::filesystem::path& path);

// ---- tensor container ----
//
// Little-endian layout: magic "PRSMPKG1"; u32 format_version; u32 header
// length; header as UTF-8 `key=value` lines; per tensor: u16 name length,
// name, u8 dtype (0 = f32), u8 rank, rank x u32 dims, raw f32 payload;
// trailing u32 CRC32 over everything after the magic.

inline constexpr uint32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[9] = "PRSMPKG1";

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Container {
  uint32_t version = kContainerVersion;
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<NamedTensor> tensors;

  const std::string* find_header(const std::string& key) const;
  std::string header_value(const std::string& key) const;  // format error if missing
  void set_header(const std::string& key, const std::string& value);
};

std::vector<uint8_t> serialize_container(const Container& container);
Container parse_container(const std::vector<uint8_t>& bytes);

void save_container(const std::filesystem::path& path, const Container& container);
Container load_container(const std::filesystem::path& path);

}  // namespace prism::io
