#pragma once

#include "pfn/matrix.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace pfn {

// ---------------------------------------------------------------------------
// CSV

inline void write_matrix_csv(const Matrix& M, std::ostream& out) {
  out << std::setprecision(17);
  for (Index r = 0; r < M.rows(); ++r) {
    for (Index c = 0; c < M.cols(); ++c) {
      if (c) out << ',';
      out << M(r, c);
    }
    out << '\n';
  }
}

inline void write_matrix_csv(const Matrix& M, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_matrix_csv(M, out);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline NonNegMatrix read_matrix_csv(std::istream& in, const std::string& source = "<stream>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      cell.erase(0, cell.find_first_not_of(" \t"));
      cell.erase(cell.find_last_not_of(" \t") + 1);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw IoError(source + ":" + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
      if (v < 0.0)
        throw IoError(source + ":" + std::to_string(line_no) + ": negative entry " + cell);
      row.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError(source + ":" + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(source + ": empty matrix file");
  Matrix M(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      M(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return NonNegMatrix(std::move(M));
}

inline NonNegMatrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_matrix_csv(in, path);
}

// ---------------------------------------------------------------------------
// Heatmaps

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Black -> red -> yellow -> white for v in [0, 1].
inline Rgb hot_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto channel = [](double x) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(x, 0.0, 1.0)));
  };
  return {channel(3.0 * v), channel(3.0 * v - 1.0), channel(3.0 * v - 2.0)};
}

struct HeatmapSpec {
  int block = 8;  // pixels per matrix entry, both directions
};

/// Binary P6 image, row 0 at the top, scaled between the matrix min and max.
/// A constant matrix maps to black.
inline std::string render_heatmap(const Matrix& M, const HeatmapSpec& spec = {}) {
  if (M.size() == 0) throw DimensionError("render_heatmap: empty matrix");
  if (spec.block < 1) throw ParameterError("render_heatmap: block must be >= 1");
  const double lo = M.minCoeff();
  const double span = M.maxCoeff() - lo;
  const Index width = M.cols() * spec.block;
  const Index height = M.rows() * spec.block;
  std::ostringstream out;
  out << "P6\n" << width << ' ' << height << "\n255\n";
  std::string row(static_cast<std::size_t>(width) * 3, '\0');
  for (Index r = 0; r < M.rows(); ++r) {
    for (Index c = 0; c < M.cols(); ++c) {
      const Rgb px = hot_color(span > 0.0 ? (M(r, c) - lo) / span : 0.0);
      for (int k = 0; k < spec.block; ++k) {
        const std::size_t at = (static_cast<std::size_t>(c) * spec.block + k) * 3;
        row[at] = static_cast<char>(px.r);
        row[at + 1] = static_cast<char>(px.g);
        row[at + 2] = static_cast<char>(px.b);
      }
    }
    for (int k = 0; k < spec.block; ++k) out << row;
  }
  return out.str();
}

inline void write_heatmap(const Matrix& M, const std::string& path, const HeatmapSpec& spec = {}) {
  const std::string image = render_heatmap(M, spec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(image.data(), static_cast<std::streamsize>(image.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Spectrograms

inline Vector hann_window(Index n) {
  Vector w(n);
  for (Index i = 0; i < n; ++i)
    w(i) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// |STFT| with a periodic Hann window. Rows are bins 0..window_len/2-1; the
/// Nyquist bin is dropped. Columns are frames at multiples of hop.
inline Matrix stft_magnitude(const std::vector<double>& samples, Index window_len, Index hop) {
  if (window_len < 2 || (window_len & (window_len - 1)) != 0)
    throw ParameterError("stft_magnitude: window length must be a power of two");
  if (hop < 1) throw ParameterError("stft_magnitude: hop must be >= 1");
  const auto n = static_cast<Index>(samples.size());
  if (n < window_len) throw ParameterError("stft_magnitude: signal shorter than one window");
  const Index frames = 1 + (n - window_len) / hop;
  const Vector w = hann_window(window_len);
  Matrix out(window_len / 2, frames);
  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(window_len));
  std::vector<std::complex<double>> spectrum;
  for (Index f = 0; f < frames; ++f) {
    for (Index i = 0; i < window_len; ++i)
      frame[static_cast<std::size_t>(i)] = samples[static_cast<std::size_t>(f * hop + i)] * w(i);
    fft.fwd(spectrum, frame);
    for (Index k = 0; k < window_len / 2; ++k) out(k, f) = std::abs(spectrum[static_cast<std::size_t>(k)]);
  }
  return out;
}

struct WavAudio {
  int sample_rate = 0;
  std::vector<double> samples;  // in [-1, 1)
};

/// 16-bit PCM mono only.
inline WavAudio read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto u16 = [&](std::size_t at) {
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[at]) |
                                      (static_cast<std::uint8_t>(bytes[at + 1]) << 8));
  };
  auto u32 = [&](std::size_t at) {
    return static_cast<std::uint32_t>(u16(at)) | (static_cast<std::uint32_t>(u16(at + 2)) << 16);
  };
  const std::string hint = " (convert with e.g. `sox in.wav -b 16 -c 1 out.wav`)";
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw IoError(path + ": not a RIFF/WAVE file");
  WavAudio audio;
  bool have_format = false;
  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::string id = bytes.substr(at, 4);
    const std::uint32_t size = u32(at + 4);
    const std::size_t body = at + 8;
    if (body + size > bytes.size()) throw IoError(path + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw IoError(path + ": short fmt chunk");
      const auto format = u16(body);
      const auto channels = u16(body + 2);
      const auto bits = u16(body + 14);
      if (format != 1 || channels != 1 || bits != 16)
        throw IoError(path + ": only 16-bit PCM mono is supported" + hint);
      audio.sample_rate = static_cast<int>(u32(body + 4));
      have_format = true;
    } else if (id == "data") {
      if (!have_format) throw IoError(path + ": data chunk before fmt chunk");
      audio.samples.reserve(size / 2);
      for (std::size_t i = 0; i + 1 < size; i += 2)
        audio.samples.push_back(static_cast<std::int16_t>(u16(body + i)) / 32768.0);
      return audio;
    }
    at = body + size + (size & 1u);
  }
  throw IoError(path + ": no data chunk");
}

}  // namespace pfn
