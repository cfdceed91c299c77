#include "pfn/io.hpp"
#include "pfn/rng.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace pfn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pfn_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& s, std::uint32_t v) {
  put16(s, static_cast<std::uint16_t>(v & 0xffff));
  put16(s, static_cast<std::uint16_t>(v >> 16));
}

std::string wav_bytes(const std::vector<std::int16_t>& samples, std::uint16_t channels = 1,
                      std::uint16_t bits = 16, int rate = 8000) {
  std::string data;
  for (std::int16_t v : samples) put16(data, static_cast<std::uint16_t>(v));
  std::string s = "RIFF";
  put32(s, static_cast<std::uint32_t>(36 + data.size()));
  s += "WAVEfmt ";
  put32(s, 16);
  put16(s, 1);
  put16(s, channels);
  put32(s, static_cast<std::uint32_t>(rate));
  put32(s, static_cast<std::uint32_t>(rate * channels * bits / 8));
  put16(s, static_cast<std::uint16_t>(channels * bits / 8));
  put16(s, bits);
  s += "data";
  put32(s, static_cast<std::uint32_t>(data.size()));
  return s + data;
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Csv, RoundTripIsExact) {
  Rng rng(41);
  for (int n = 0; n < 1000; ++n) {
    const Index r = 1 + static_cast<Index>(rng.index(6)), c = 1 + static_cast<Index>(rng.index(6));
    Matrix M(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) M(i, j) = rng.uniform() < 0.2 ? 0.0 : rng.uniform_positive(1e3) * 1e-3;
    std::stringstream buf;
    write_matrix_csv(M, buf);
    ASSERT_TRUE(read_matrix_csv(buf).matrix() == M) << "case " << n;
  }
}

TEST(Csv, FileRoundTrip) {
  Matrix M(2, 3);
  M << 0, 1.5, 2, 1e-300, 3, 4;
  const fs::path p = scratch("m.csv");
  write_matrix_csv(M, p.string());
  EXPECT_TRUE(read_matrix_csv(p.string()).matrix() == M);
}

TEST(Csv, ToleratesSpacesAndCrLf) {
  std::istringstream in("1, 2\r\n\r\n3 ,4\r\n");
  const Matrix M = read_matrix_csv(in).matrix();
  ASSERT_EQ(M.rows(), 2);
  EXPECT_EQ(M(1, 0), 3.0);
}

TEST(Csv, Errors) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_matrix_csv(in);
  };
  EXPECT_THROW(parse(""), IoError);
  EXPECT_THROW(parse("1,2\n3\n"), IoError);
  EXPECT_THROW(parse("1,x\n"), IoError);
  EXPECT_THROW(parse("1,-2\n"), IoError);
  EXPECT_THROW(parse("1,,2\n"), IoError);
  EXPECT_THROW(parse("nan\n"), IoError);
  try {
    parse("1,2\n3,-4\n");
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_matrix_csv((scratch("missing") / "none.csv").string()), IoError);
}

TEST(Heatmap, ColorRampEnds) {
  EXPECT_EQ(hot_color(0.0), (Rgb{0, 0, 0}));
  EXPECT_EQ(hot_color(1.0), (Rgb{255, 255, 255}));
  EXPECT_EQ(hot_color(1.0 / 3.0), (Rgb{255, 0, 0}));
  EXPECT_EQ(hot_color(2.0 / 3.0), (Rgb{255, 255, 0}));
  EXPECT_EQ(hot_color(-1.0), hot_color(0.0));
}

TEST(Heatmap, AllZeroIsBlack) {
  const std::string img = render_heatmap(Matrix::Zero(3, 4), {2});
  const std::string header = "P6\n8 6\n255\n";
  ASSERT_EQ(img.substr(0, header.size()), header);
  const std::string pixels = img.substr(header.size());
  EXPECT_EQ(pixels.size(), 8u * 6u * 3u);
  EXPECT_EQ(pixels.find_first_not_of('\0'), std::string::npos);
}

TEST(Heatmap, TwoByTwoGivesDistinctColors) {
  Matrix M(2, 2);
  M << 0, 1, 2, 3;
  const std::string img = render_heatmap(M, {1});
  const std::string px = img.substr(std::string("P6\n2 2\n255\n").size());
  ASSERT_EQ(px.size(), 12u);
  std::set<std::string> colors;
  for (int k = 0; k < 4; ++k) colors.insert(px.substr(static_cast<std::size_t>(3 * k), 3));
  EXPECT_EQ(colors.size(), 4u);
  EXPECT_EQ(px.substr(0, 3), std::string(3, '\0'));
  EXPECT_EQ(px.substr(9, 3), std::string(3, '\xff'));
}

TEST(Heatmap, Errors) {
  EXPECT_THROW(render_heatmap(Matrix(0, 0)), DimensionError);
  EXPECT_THROW(render_heatmap(Matrix::Ones(1, 1), {0}), ParameterError);
  EXPECT_THROW(write_heatmap(Matrix::Ones(1, 1), (scratch("no") / "such" / "x.ppm").string()), IoError);
}

TEST(Stft, SinusoidPeaksAtItsBin) {
  const Index N = 256;
  for (Index bin : {3, 17, 64, 100}) {
    std::vector<double> x(2048);
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = std::sin(2.0 * std::numbers::pi * static_cast<double>(bin) * static_cast<double>(i) / N);
    const Matrix S = stft_magnitude(x, N, 128);
    EXPECT_EQ(S.rows(), N / 2);
    for (Index f = 0; f < S.cols(); ++f) {
      Index k = 0;
      S.col(f).maxCoeff(&k);
      EXPECT_EQ(k, bin);
      // Periodic Hann: the peak is N/4 for a unit sinusoid.
      EXPECT_NEAR(S(bin, f), N / 4.0, 1e-9);
    }
  }
}

TEST(Stft, ZeroSignalGivesZeroMatrix) {
  const Matrix S = stft_magnitude(std::vector<double>(5000, 0.0), 1024, 512);
  EXPECT_EQ(S.rows(), 512);
  EXPECT_EQ(S.cols(), 1 + (5000 - 1024) / 512);
  EXPECT_EQ(S.maxCoeff(), 0.0);
}

TEST(Stft, FrameCountAtFortyOneSlicesPerSecond) {
  const int rate = 44100;
  const Index hop = rate / 41;
  // 15.17 s gives the 622 slices; a flat 15 s gives 615.
  const auto n = static_cast<std::size_t>(15.17 * rate);
  const Matrix S = stft_magnitude(std::vector<double>(n, 0.0), 1024, hop);
  EXPECT_EQ(S.rows(), 512);
  EXPECT_EQ(S.cols(), 622);
  EXPECT_EQ(stft_magnitude(std::vector<double>(15 * rate, 0.0), 1024, hop).cols(), 615);
}

TEST(Stft, ParsevalOnWhiteNoise) {
  Rng rng(42);
  const Index N = 512;
  for (int n = 0; n < 1000; ++n) {
    std::vector<double> x(static_cast<std::size_t>(N));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const Matrix S = stft_magnitude(x, N, N);
    ASSERT_EQ(S.cols(), 1);
    const Vector w = hann_window(N);
    double energy = 0.0, nyquist = 0.0;
    for (Index i = 0; i < N; ++i) {
      const double v = x[static_cast<std::size_t>(i)] * w(i);
      energy += v * v;
      nyquist += (i % 2 ? -v : v);
    }
    // Full spectrum from the kept half: DC once, bins 1..N/2-1 twice, Nyquist once.
    double spectrum = S(0, 0) * S(0, 0) + nyquist * nyquist;
    for (Index k = 1; k < N / 2; ++k) spectrum += 2.0 * S(k, 0) * S(k, 0);
    ASSERT_NEAR(spectrum / static_cast<double>(N), energy, 1e-6 * energy) << "case " << n;
    ASSERT_GE(S.minCoeff(), 0.0);
  }
}

TEST(Stft, Errors) {
  EXPECT_THROW(stft_magnitude(std::vector<double>(100), 100, 10), ParameterError);
  EXPECT_THROW(stft_magnitude(std::vector<double>(100), 64, 0), ParameterError);
  EXPECT_THROW(stft_magnitude(std::vector<double>(10), 64, 8), ParameterError);
}

TEST(Wav, ReadsPcm16Mono) {
  const fs::path p = scratch("a.wav");
  write_file(p, wav_bytes({0, 16384, -32768, 32767}, 1, 16, 22050));
  const WavAudio a = read_wav(p.string());
  EXPECT_EQ(a.sample_rate, 22050);
  ASSERT_EQ(a.samples.size(), 4u);
  EXPECT_EQ(a.samples[1], 0.5);
  EXPECT_EQ(a.samples[2], -1.0);
}

TEST(Wav, RejectsOtherFormats) {
  const fs::path stereo = scratch("stereo.wav");
  write_file(stereo, wav_bytes({0, 0}, 2));
  try {
    read_wav(stereo.string());
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("16-bit PCM mono"), std::string::npos);
  }
  const fs::path junk = scratch("junk.wav");
  write_file(junk, "not a wav file at all");
  EXPECT_THROW(read_wav(junk.string()), IoError);
  EXPECT_THROW(read_wav(scratch("absent.wav").string() + ".none"), IoError);
}
