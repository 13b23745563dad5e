// Copyright 2026 The ICL Engine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace icl::io {

/// Little-endian byte sink; flushed to disk with write_file.
class ByteWriter {
 public:
  void bytes(std::string_view s);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  /// Length-prefixed (u32) string.
  void str(std::string_view s);
  /// Narrows each value to float32.
  void f32s(std::span<const double> values);

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader. Every underrun raises FormatError.
class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> data, std::string origin);

  std::string bytes(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  std::vector<double> f32s(std::size_t n);

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  const std::string& origin() const noexcept { return origin_; }
  [[noreturn]] void fail(const std::string& why) const;

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace icl::io
