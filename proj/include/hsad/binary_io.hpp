#pragma once

// Little-endian framing shared by the HST1/HSF1/HSM1 containers:
//   4-byte ASCII magic, u32 version, u32 header length, UTF-8 JSON header,
// followed by format-specific records. JSON blocks are always length-prefixed
// with a u32.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "hsad/error.hpp"

namespace hsad {

using Json = nlohmann::ordered_json;

inline constexpr std::uint32_t kFormatVersion = 1;

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xffu), static_cast<char>((v >> 8) & 0xffu),
                              static_cast<char>((v >> 16) & 0xffu),
                              static_cast<char>((v >> 24) & 0xffu)};
  os.write(b.data(), b.size());
}

inline void write_f32(std::ostream& os, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    buf[4 * i + 0] = static_cast<char>(bits & 0xffu);
    buf[4 * i + 1] = static_cast<char>((bits >> 8) & 0xffu);
    buf[4 * i + 2] = static_cast<char>((bits >> 16) & 0xffu);
    buf[4 * i + 3] = static_cast<char>((bits >> 24) & 0xffu);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void write_f32(std::ostream& os, std::span<const double> values) {
  std::vector<float> narrowed(values.begin(), values.end());
  write_f32(os, std::span<const float>(narrowed));
}

inline void write_json_block(std::ostream& os, const Json& j) {
  const std::string text = j.dump();
  write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline void write_preamble(std::ostream& os, std::string_view magic, const Json& header) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_u32(os, kFormatVersion);
  write_json_block(os, header);
}

// Reads from a stream, turning short reads into CorruptionError that carries
// the caller-supplied context ("record 17 payload").
class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void read_exact(char* dst, std::size_t n, const std::string& context) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw CorruptionError("truncated " + context);
    }
  }

  std::uint32_t u32(const std::string& context) {
    std::array<unsigned char, 4> b{};
    read_exact(reinterpret_cast<char*>(b.data()), 4, context);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  Json json_block(const std::string& context) {
    const std::uint32_t len = u32(context + " length");
    std::string text(len, '\0');
    read_exact(text.data(), len, context);
    try {
      return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError("malformed JSON in " + context + ": " + e.what());
    }
  }

  // Reads `count` float32 values; rejects NaN/Inf.
  std::vector<float> f32(std::size_t count, const std::string& context) {
    std::vector<unsigned char> buf(count * 4);
    read_exact(reinterpret_cast<char*>(buf.data()), buf.size(), context);
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
      out[i] = std::bit_cast<float>(bits);
      if (!std::isfinite(out[i])) {
        throw DataError("non-finite value at index " + std::to_string(i) + " of " + context);
      }
    }
    return out;
  }

  // Magic + version + header JSON.
  Json preamble(std::string_view magic) {
    std::array<char, 4> got{};
    is_.read(got.data(), 4);
    if (is_.gcount() != 4 || std::string_view(got.data(), 4) != magic) {
      throw UnsupportedFormatError("expected magic \"" + std::string(magic) + "\"");
    }
    const std::uint32_t version = u32("version");
    if (version != kFormatVersion) {
      throw UnsupportedFormatError(std::string(magic) + " version " + std::to_string(version));
    }
    return json_block("header");
  }

  bool at_eof() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
};

// JSON field access with format errors instead of nlohmann exceptions.
template <typename T>
T field(const Json& j, const char* key, const std::string& context) {
  if (!j.is_object() || !j.contains(key)) {
    throw FormatError(context + " is missing \"" + key + "\"");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(context + " has an invalid \"" + key + "\"");
  }
}

inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return out.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace io
}  // namespace hsad
