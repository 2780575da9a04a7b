#include "upit/masks.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace upit::masks {

namespace {

constexpr char kGridMagic[8] = {'U', 'P', 'I', 'T', 'G', 'R', 'D', '1'};

void require_same_shape(const CArray& a, const CArray& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("spectrogram shape mismatch");
}

}  // namespace

MaskSet oracle_mask(const SourceSet& set, MaskKind kind, double eps) {
  const Index s_count = set.num_speakers();
  if (s_count < 1) throw std::invalid_argument("empty source set");
  if (kind == MaskKind::Estimated)
    throw std::invalid_argument("no oracle for estimated masks");
  for (const auto& src : set.sources)
    require_same_shape(src.bins, set.mixture.bins);

  const auto [mix_mag, mix_phase] = dsp::magnitude_phase(set.mixture);
  const Array& big_r = mix_mag.values;
  const Array safe_r = big_r.max(eps);
  const auto degenerate_r = big_r < eps;

  MaskSet out;
  out.kind = kind;
  out.masks.reserve(static_cast<std::size_t>(s_count));

  if (kind == MaskKind::Irm) {
    std::vector<Array> amps;
    amps.reserve(static_cast<std::size_t>(s_count));
    Array denom = Array::Zero(big_r.rows(), big_r.cols());
    for (const auto& src : set.sources) {
      amps.push_back(src.bins.abs());
      denom += amps.back();
    }
    const Array safe_denom = denom.max(eps);
    const double uniform = 1.0 / static_cast<double>(s_count);
    for (const auto& amp : amps)
      out.masks.push_back((denom < eps).select(uniform, amp / safe_denom));
    return out;
  }

  for (const auto& src : set.sources) {
    const auto [amp, phase] = dsp::magnitude_phase(src);
    Array mask;
    switch (kind) {
      case MaskKind::Iam:
        mask = amp.values / safe_r;
        break;
      case MaskKind::Ipsm:
      case MaskKind::Inpsm:
        mask = amp.values * (mix_phase.values - phase.values).cos() / safe_r;
        if (kind == MaskKind::Inpsm) mask = mask.max(0.0);
        break;
      default:
        throw std::invalid_argument("no oracle for estimated masks");
    }
    out.masks.push_back(degenerate_r.select(0.0, mask));
  }
  return out;
}

MagSpectrogram apply_mask(const Array& mask, const MagSpectrogram& mixture) {
  if (mask.rows() != mixture.values.rows() ||
      mask.cols() != mixture.values.cols())
    throw std::invalid_argument("mask shape mismatch");
  MagSpectrogram out;
  out.values = (mask * mixture.values).max(0.0);
  return out;
}

TimeSignal reconstruct(const Array& mask, const MagSpectrogram& mixture_mag,
                       const PhaseSpectrogram& mixture_phase,
                       const StftConfig& config) {
  if (mixture_phase.values.rows() != mixture_mag.values.rows() ||
      mixture_phase.values.cols() != mixture_mag.values.cols())
    throw std::invalid_argument("phase shape mismatch");
  if (dsp::check_cola(config) >= 1e-6)
    throw std::invalid_argument("config violates constant overlap-add");

  const MagSpectrogram masked = apply_mask(mask, mixture_mag);
  ComplexSpectrogram spec;
  spec.config = config;
  spec.bins = masked.values * mixture_phase.values.cos() +
              std::complex<double>(0.0, 1.0) *
                  (masked.values * mixture_phase.values.sin());
  return dsp::synthesize(spec);
}

void write_grid(const std::string& path, const Array& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write grid file: " + path);
  out.write(kGridMagic, sizeof kGridMagic);
  const auto rows = static_cast<std::uint32_t>(grid.rows());
  const auto cols = static_cast<std::uint32_t>(grid.cols());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  out.write(reinterpret_cast<const char*>(grid.data()),
            static_cast<std::streamsize>(sizeof(double)) * grid.size());
  if (!out) throw std::runtime_error("short write to grid file: " + path);
}

Array read_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open grid file: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kGridMagic, sizeof magic) != 0)
    throw std::runtime_error("not a grid file: " + path);
  std::uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in) throw std::runtime_error("truncated grid file: " + path);
  Array grid(rows, cols);
  in.read(reinterpret_cast<char*>(grid.data()),
          static_cast<std::streamsize>(sizeof(double)) * grid.size());
  if (!in) throw std::runtime_error("truncated grid file: " + path);
  return grid;
}

}  // namespace upit::masks
