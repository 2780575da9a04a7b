#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "upit/rng.hpp"
#include "upit/wav.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace upit;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "upit_wav_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& b) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
}

/// Hand-built header for rejection tests.
std::vector<std::uint8_t> wav_header(std::uint16_t format,
                                     std::uint16_t channels,
                                     std::uint32_t rate, std::uint16_t bits,
                                     std::uint32_t data_size) {
  std::vector<std::uint8_t> b;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(v >> 8 * i & 0xff);
  };
  auto u16 = [&](std::uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back(v >> 8 & 0xff);
  };
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  tag("RIFF");
  u32(36 + data_size);
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(channels * bits / 8);
  u16(bits);
  tag("data");
  u32(data_size);
  b.resize(b.size() + data_size, 0);
  return b;
}

}  // namespace

TEST_CASE("quantized values survive a round trip exactly") {
  TimeSignal signal;
  signal.sample_rate = 8000.0;
  signal.samples.resize(6);
  const int grid[] = {-32768, -12345, -1, 0, 1, 32767};
  for (Index i = 0; i < 6; ++i) signal.samples[i] = grid[i] / 32768.0;

  const std::string path = temp_path("grid.wav");
  wav::write(path, signal);
  const TimeSignal back = wav::read(path);
  REQUIRE(back.length() == 6);
  CHECK(back.sample_rate == 8000.0);
  for (Index i = 0; i < 6; ++i) CHECK(back.samples[i] == signal.samples[i]);
}

TEST_CASE("arbitrary samples quantize to the nearest step") {
  rng::Engine eng(7);
  TimeSignal signal;
  signal.sample_rate = 8000.0;
  signal.samples.resize(500);
  for (Index i = 0; i < 500; ++i)
    signal.samples[i] = 2.0 * rng::uniform01(eng) - 1.0;

  const std::string path = temp_path("random.wav");
  wav::write(path, signal);
  const TimeSignal back = wav::read(path);
  REQUIRE(back.length() == 500);
  CHECK((back.samples - signal.samples).abs().maxCoeff() <= 0.5 / 32768.0);

  // A second trip through the quantizer is the identity.
  wav::write(path, back);
  const TimeSignal again = wav::read(path);
  for (Index i = 0; i < 500; ++i) CHECK(again.samples[i] == back.samples[i]);
}

TEST_CASE("out-of-range samples clamp to full scale") {
  TimeSignal signal;
  signal.samples.resize(3);
  signal.samples << 1.5, -1.5, 1.0;
  const std::string path = temp_path("clip.wav");
  wav::write(path, signal);
  const TimeSignal back = wav::read(path);
  CHECK(back.samples[0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(back.samples[1] == -1.0);
  CHECK(back.samples[2] == doctest::Approx(32767.0 / 32768.0));
}

TEST_CASE("sample rate is preserved and checked") {
  TimeSignal signal;
  signal.sample_rate = 16000.0;
  signal.samples = Eigen::ArrayXd::Zero(10);
  const std::string path = temp_path("rate.wav");
  wav::write(path, signal);
  CHECK(wav::read(path).sample_rate == 16000.0);
  CHECK_NOTHROW(wav::read(path, 16000.0));
  CHECK_THROWS_AS(wav::read(path, 8000.0), std::runtime_error);
}

TEST_CASE("non-conforming files are rejected") {
  const std::string stereo = temp_path("stereo.wav");
  write_bytes(stereo, wav_header(1, 2, 8000, 16, 8));
  CHECK_THROWS_AS(wav::read(stereo), std::runtime_error);

  const std::string eight_bit = temp_path("eight.wav");
  write_bytes(eight_bit, wav_header(1, 1, 8000, 8, 8));
  CHECK_THROWS_AS(wav::read(eight_bit), std::runtime_error);

  const std::string float_fmt = temp_path("float.wav");
  write_bytes(float_fmt, wav_header(3, 1, 8000, 32, 8));
  CHECK_THROWS_AS(wav::read(float_fmt), std::runtime_error);

  const std::string garbage = temp_path("garbage.wav");
  write_bytes(garbage, {'n', 'o', 't', 'a', 'w', 'a', 'v'});
  CHECK_THROWS_AS(wav::read(garbage), std::runtime_error);

  auto truncated_bytes = wav_header(1, 1, 8000, 16, 100);
  truncated_bytes.resize(truncated_bytes.size() - 50);
  const std::string truncated = temp_path("truncated.wav");
  write_bytes(truncated, truncated_bytes);
  CHECK_THROWS_AS(wav::read(truncated), std::runtime_error);

  CHECK_THROWS_AS(wav::read(temp_path("missing.wav")), std::runtime_error);
}
