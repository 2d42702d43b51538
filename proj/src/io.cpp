#include "prism/io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <mutex>

#include "prism/error.hpp"

namespace prism::io {
namespace {

std::mutex g_observer_mutex;
std::function<void(const std::string&)> g_open_observer;

void note_open(const std::filesystem::path& path) {
  std::lock_guard<std::mutex> lock(g_observer_mutex);
  if (g_open_observer) g_open_observer(path.string());
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::vector<uint8_t>& bytes, size_t offset) : bytes_(bytes), pos_(offset) {}

  size_t pos() const { return pos_; }

  const uint8_t* take(size_t n) {
    require(pos_ + n <= bytes_.size(), ErrorKind::format, "container truncated");
    const uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  uint16_t u16() {
    const uint8_t* p = take(2);
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }

  uint32_t u32() {
    const uint8_t* p = take(4);
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }

  uint8_t u8() { return *take(1); }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_;
};

}  // namespace

void set_open_observer(std::function<void(const std::string&)> observer) {
  std::lock_guard<std::mutex> lock(g_observer_mutex);
  g_open_observer = std::move(observer);
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  note_open(path);
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  require(in.good(), ErrorKind::io, "read failed for " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const void* data, size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  require(out.good(), ErrorKind::io, "write failed for " + path.string());
}

void write_pgm16(const std::filesystem::path& path, const uint16_t* values, int height,
                 int width) {
  require(height > 0 && width > 0, ErrorKind::invalid_argument, "pgm dims must be positive");
  std::string head = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
  std::vector<uint8_t> bytes(head.begin(), head.end());
  bytes.reserve(bytes.size() + static_cast<size_t>(height) * width * 2);
  const int64_t n = static_cast<int64_t>(height) * width;
  for (int64_t i = 0; i < n; ++i) {
    bytes.push_back(static_cast<uint8_t>(values[i] >> 8));
    bytes.push_back(static_cast<uint8_t>(values[i] & 0xff));
  }
  write_file(path, bytes.data(), bytes.size());
}

PgmImage read_pgm16(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    require(pos < bytes.size(), ErrorKind::format, "pgm header truncated: " + path.string());
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
  };
  require(next_token() == "P5", ErrorKind::format, "not a binary PGM: " + path.string());
  PgmImage img;
  img.width = std::stoi(next_token());
  img.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  require(maxval == 65535, ErrorKind::format, "expected 16-bit PGM: " + path.string());
  require(pos < bytes.size() && std::isspace(bytes[pos]), ErrorKind::format,
          "pgm header malformed: " + path.string());
  ++pos;
  const int64_t n = static_cast<int64_t>(img.width) * img.height;
  require(bytes.size() - pos == static_cast<size_t>(n) * 2, ErrorKind::format,
          "pgm payload size mismatch: " + path.string());
  img.values.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    img.values[static_cast<size_t>(i)] =
        static_cast<uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1]);
  }
  return img;
}

const std::string* Container::find_header(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::string Container::header_value(const std::string& key) const {
  const std::string* v = find_header(key);
  require(v != nullptr, ErrorKind::format, "container header missing key '" + key + "'");
  return *v;
}

void Container::set_header(const std::string& key, const std::string& value) {
  for (auto& [k, v] : header) {
    if (k == key) {
      v = value;
      return;
    }
  }
  header.emplace_back(key, value);
}

std::vector<uint8_t> serialize_container(const Container& container) {
  std::vector<uint8_t> out(kContainerMagic, kContainerMagic + 8);
  put_u32(out, container.version);

  std::string header;
  for (const auto& [k, v] : container.header) header += k + "=" + v + "\n";
  put_u32(out, static_cast<uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());

  for (const auto& entry : container.tensors) {
    require(entry.name.size() <= 0xffff, ErrorKind::invalid_argument, "tensor name too long");
    require(entry.tensor.rank() <= 0xff, ErrorKind::invalid_argument, "tensor rank too large");
    put_u16(out, static_cast<uint16_t>(entry.name.size()));
    out.insert(out.end(), entry.name.begin(), entry.name.end());
    out.push_back(0);  // dtype f32
    out.push_back(static_cast<uint8_t>(entry.tensor.rank()));
    for (int d : entry.tensor.shape()) put_u32(out, static_cast<uint32_t>(d));
    const auto* payload = reinterpret_cast<const uint8_t*>(entry.tensor.data());
    out.insert(out.end(), payload, payload + entry.tensor.numel() * sizeof(float));
  }

  const auto crc =
      static_cast<uint32_t>(crc32(0L, out.data() + 8, static_cast<uInt>(out.size() - 8)));
  put_u32(out, crc);
  return out;
}

Container parse_container(const std::vector<uint8_t>& bytes) {
  require(bytes.size() >= 20, ErrorKind::format, "container too short");
  require(std::memcmp(bytes.data(), kContainerMagic, 8) == 0, ErrorKind::format,
          "bad container magic");

  const auto stored_crc = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                          (static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8) |
                          (static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16) |
                          (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
  const auto actual_crc = static_cast<uint32_t>(
      crc32(0L, bytes.data() + 8, static_cast<uInt>(bytes.size() - 12)));
  require(stored_crc == actual_crc, ErrorKind::corruption, "container checksum mismatch");

  Reader r(bytes, 8);
  Container container;
  container.version = r.u32();
  require(container.version == kContainerVersion, ErrorKind::unsupported_version,
          "unsupported container version " + std::to_string(container.version));

  const uint32_t header_len = r.u32();
  const uint8_t* hp = r.take(header_len);
  std::string header(reinterpret_cast<const char*>(hp), header_len);
  size_t start = 0;
  while (start < header.size()) {
    size_t eol = header.find('\n', start);
    if (eol == std::string::npos) eol = header.size();
    const std::string line = header.substr(start, eol - start);
    start = eol + 1;
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::format, "malformed container header line");
    container.header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }

  const std::string* count_str = container.find_header("tensor_count");
  require(count_str != nullptr, ErrorKind::format, "container header missing tensor_count");
  const int tensor_count = std::stoi(*count_str);
  for (int i = 0; i < tensor_count; ++i) {
    const uint16_t name_len = r.u16();
    const uint8_t* np = r.take(name_len);
    NamedTensor entry;
    entry.name.assign(reinterpret_cast<const char*>(np), name_len);
    const uint8_t dtype = r.u8();
    require(dtype == 0, ErrorKind::format, "unsupported tensor dtype");
    const int rank = r.u8();
    std::vector<int> shape(static_cast<size_t>(rank));
    int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape[static_cast<size_t>(d)] = static_cast<int>(r.u32());
      numel *= shape[static_cast<size_t>(d)];
    }
    require(numel > 0, ErrorKind::format, "tensor with empty shape");
    const uint8_t* payload = r.take(static_cast<size_t>(numel) * sizeof(float));
    std::vector<float> values(static_cast<size_t>(numel));
    std::memcpy(values.data(), payload, values.size() * sizeof(float));
    entry.tensor = Tensor::from_data(std::move(shape), std::move(values));
    container.tensors.push_back(std::move(entry));
  }
  require(r.pos() == bytes.size() - 4, ErrorKind::format, "trailing bytes in container");
  return container;
}

void save_container(const std::filesystem::path& path, const Container& container) {
  const auto bytes = serialize_container(container);
  write_file(path, bytes.data(), bytes.size());
}

Container load_container(const std::filesystem::path& path) {
  return parse_container(read_file(path));
}

}  // namespace prism::io
