#include "upit/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace upit::wav {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(static_cast<std::uint32_t>(p[0]) |
                                    static_cast<std::uint32_t>(p[1]) << 8);
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8 & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 16 & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 24 & 0xff));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8 & 0xff));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

TimeSignal read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file: " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());

  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* samples = nullptr;
  std::size_t sample_bytes = 0;

  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const unsigned char* chunk = data.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > data.size())
      throw std::runtime_error("truncated wav chunk: " + path);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw std::runtime_error("malformed fmt chunk: " + path);
      format = read_u16(data.data() + body);
      channels = read_u16(data.data() + body + 2);
      rate = read_u32(data.data() + body + 4);
      bits = read_u16(data.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      samples = data.data() + body;
      sample_bytes = size;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }

  if (!have_fmt || samples == nullptr)
    throw std::runtime_error("missing fmt or data chunk: " + path);
  if (format != 1 || bits != 16)
    throw std::runtime_error("unsupported wav encoding (need 16-bit PCM): " +
                             path);
  if (channels != 1)
    throw std::runtime_error("unsupported channel count (need mono): " + path);

  const std::size_t count = sample_bytes / 2;
  TimeSignal signal;
  signal.sample_rate = static_cast<double>(rate);
  signal.samples.resize(static_cast<Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint16_t raw = read_u16(samples + 2 * i);
    const auto value = static_cast<std::int16_t>(raw);
    signal.samples[static_cast<Index>(i)] = static_cast<double>(value) / 32768.0;
  }
  return signal;
}

TimeSignal read(const std::string& path, double expected_rate) {
  TimeSignal signal = read(path);
  if (signal.sample_rate != expected_rate)
    throw std::runtime_error(
        "sample rate mismatch in " + path + ": expected " +
        std::to_string(expected_rate) + " Hz, file has " +
        std::to_string(signal.sample_rate) + " Hz");
  return signal;
}

void write(const std::string& path, const TimeSignal& signal) {
  const auto count = static_cast<std::uint32_t>(signal.samples.size());
  const std::uint32_t data_size = count * 2;
  const auto rate = static_cast<std::uint32_t>(std::lround(signal.sample_rate));

  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, rate);
  put_u32(out, rate * 2);  // byte rate
  put_u16(out, 2);         // block align
  put_u16(out, 16);        // bits per sample
  put_tag(out, "data");
  put_u32(out, data_size);
  for (Index i = 0; i < signal.samples.size(); ++i) {
    double scaled = std::round(signal.samples[i] * 32768.0);
    scaled = std::clamp(scaled, -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(
                     static_cast<std::int16_t>(scaled)));
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write wav file: " + path);
  file.write(reinterpret_cast<const char*>(out.data()),
             static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("short write to wav file: " + path);
}

}  // namespace upit::wav
