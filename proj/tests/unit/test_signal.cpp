// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include "helpers.hpp"
#include "physkit/error.hpp"
#include "physkit/rng.hpp"
#include "physkit/signal.hpp"

using namespace physkit;
using namespace physkit::signal;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> tone(double hz, double fs, std::size_t n, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * std::numbers::pi * hz * double(i) / fs + phase);
  return x;
}

SynthConfig clean_config() {
  SynthConfig c;
  c.snr_db = kInf;
  return c;
}

}  // namespace

TEST_SUITE("signal.gen") {
  TEST_CASE("same seed gives the same clip") {
    const SyntheticClip a = gen_clip(72, SynthConfig{}, 11);
    const SyntheticClip b = gen_clip(72, SynthConfig{}, 11);
    CHECK(a.bvp == b.bvp);
    CHECK(a.x_enc == b.x_enc);
    CHECK(a.pyramid.levels.size() == b.pyramid.levels.size());
    for (std::size_t i = 0; i < a.pyramid.levels.size(); ++i) CHECK(a.pyramid.levels[i] == b.pyramid.levels[i]);
    CHECK(a.scene.lighting == b.scene.lighting);
    CHECK(gen_clip(72, SynthConfig{}, 12).bvp != a.bvp);
  }

  TEST_CASE("noiseless limit") {
    const SyntheticClip c = gen_clip(90, clean_config(), 3);
    CHECK(c.x_enc == c.bvp);
    CHECK(c.bvp == c.clean);
  }

  TEST_CASE("shapes follow the configuration") {
    const SynthConfig cfg;
    const SyntheticClip c = gen_clip(60, cfg, 4);
    CHECK(c.bvp.size() == cfg.frames);
    REQUIRE(c.pyramid.levels.size() == cfg.levels.size());
    for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
      CHECK(c.pyramid.levels[i].shape() == Shape{1, cfg.frames, cfg.levels[i].height, cfg.levels[i].width});
    }
  }

  TEST_CASE("realized SNR is within 1 dB of the request") {
    Rng rng(5);
    for (double snr : {0.0, 5.0, 10.0, 20.0}) {
      SynthConfig cfg;
      cfg.snr_db = snr;
      for (int i = 0; i < 10; ++i) {
        const SyntheticClip c = gen_clip(rng.uniform(45, 150), cfg, rng.next_u64());
        CHECK(std::abs(measured_snr_db(c.clean, c.bvp) - snr) <= 1.0);
        CHECK(std::abs(measured_snr_db(c.bvp, c.x_enc) - snr) <= 1.0);
      }
    }
  }

  TEST_CASE("contract errors") {
    CHECK_THROWS_AS(gen_clip(44.9, SynthConfig{}, 1), ContractError);
    CHECK_THROWS_AS(gen_clip(151, SynthConfig{}, 1), ContractError);
    SynthConfig short_clip;
    short_clip.frames = 63;
    CHECK_THROWS_AS(gen_clip(70, short_clip, 1), ContractError);
    SynthConfig slow;
    slow.fs = 9.0;
    CHECK_THROWS_AS(gen_clip(150, slow, 1), ContractError);
  }
}

TEST_SUITE("signal.hr") {
  TEST_CASE("1.2 Hz tone at 30 Hz") {
    const HrEstimate e = estimate_hr(tone(1.2, 30, 512), 30);
    CHECK(std::abs(e.bpm - 72.0) <= 60.0 * e.resolution_hz);
    CHECK(e.bpm == doctest::Approx(60.0 * e.peak_hz));
    CHECK(e.peak_hz >= kBandLowHz);
    CHECK(e.peak_hz <= kBandHighHz);
  }

  TEST_CASE("two tones pick the dominant one") {
    auto x = tone(1.0, 30, 512);
    const auto h = tone(2.0, 30, 512, 0.3);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += h[i];
    const HrEstimate e = estimate_hr(x, 30);
    CHECK(std::abs(e.bpm - 60.0) <= 60.0 * e.resolution_hz);
  }

  TEST_CASE("degenerate and short inputs") {
    CHECK_THROWS_AS(estimate_hr(std::vector<double>(512, 3.0), 30), EstimationError);
    CHECK_THROWS_AS(estimate_hr(tone(1.2, 30, 119), 30), ContractError);
    CHECK_NOTHROW(estimate_hr(tone(1.2, 30, 120), 30));
  }

  TEST_CASE("scale invariance") {
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
      auto x = tone(rng.uniform(0.8, 2.4), 30, 256, 1.0, rng.uniform(0, 6));
      for (double& v : x) v += 0.5 * rng.normal();
      const double a = std::exp(rng.uniform(-5, 5));
      auto y = x;
      for (double& v : y) v *= a;
      CHECK(estimate_hr(y, 30).bpm == estimate_hr(x, 30).bpm);
    }
  }

  TEST_CASE("clean clips are recovered within one bin") {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
      const double hr = rng.uniform(45, 150);
      const SyntheticClip c = gen_clip(hr, clean_config(), rng.next_u64());
      const HrEstimate e = estimate_hr(c.bvp, c.fs);
      CAPTURE(hr);
      CHECK(std::abs(e.bpm - hr) <= 60.0 * e.resolution_hz);
    }
  }

  TEST_CASE("PSD of a tone peaks at its frequency") {
    const Psd p = welch_psd(tone(1.5, 30, 512), 30);
    CHECK(p.segment == 256);
    std::size_t best = 0;
    for (std::size_t k = 0; k < p.power.size(); ++k) {
      if (p.power[k] > p.power[best]) best = k;
    }
    CHECK(std::abs(double(best) * p.df - 1.5) <= p.df);
  }
}

TEST_SUITE("signal.metrics") {
  TEST_CASE("examples") {
    const MetricsReport a = metrics(std::vector<double>{60, 80}, std::vector<double>{62, 78});
    CHECK(a.mae == doctest::Approx(2.0));
    CHECK(a.rmse == doctest::Approx(2.0));
    REQUIRE(a.pearson_r.has_value());
    CHECK(*a.pearson_r == doctest::Approx(1.0));

    const MetricsReport b = metrics(std::vector<double>{70}, std::vector<double>{72});
    CHECK(b.mae == 2.0);
    CHECK(b.rmse == 2.0);
    CHECK_FALSE(b.pearson_r.has_value());
    CHECK_THROWS_AS(pearson_r(std::vector<double>{70}, std::vector<double>{72}), EstimationError);

    const std::vector<double> same{61, 75, 90, 120};
    const MetricsReport c = metrics(same, same);
    CHECK(c.mae == 0.0);
    CHECK(c.rmse == 0.0);
    CHECK(*c.pearson_r == 1.0);

    CHECK_THROWS_AS(metrics(std::vector<double>{}, std::vector<double>{}), ContractError);
    CHECK_THROWS_AS(metrics(std::vector<double>{1, 2}, std::vector<double>{1}), ContractError);
  }

  TEST_CASE("RMSE bounds MAE and R is a correlation") {
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
      const std::size_t n = 1 + rng.below(20);
      const auto p = testutil::randn(n, rng);
      const auto g = testutil::randn(n, rng);
      const MetricsReport m = metrics(p, g);
      CHECK(m.mae >= 0.0);
      CHECK(m.rmse >= m.mae);
      if (m.pearson_r) {
        CHECK(*m.pearson_r >= -1.0);
        CHECK(*m.pearson_r <= 1.0);
      }
    }
  }
}

TEST_SUITE("signal.io") {
  TEST_CASE("waveform CSV round trip is exact") {
    Rng rng(9);
    const Waveform w{29.97, testutil::randn(100, rng)};
    const Waveform r = parse_waveform_csv(format_waveform_csv(w));
    CHECK(r.fs == w.fs);
    CHECK(r.samples == w.samples);
  }

  TEST_CASE("CSV errors carry the line number") {
    try {
      parse_waveform_csv("fs=30\n1.0\n2.0\nabc\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_waveform_csv("1.0\n2.0\n"), ParseError);
    CHECK_THROWS_AS(parse_waveform_csv("fs=-1\n1.0\n"), ParseError);
    CHECK_THROWS_AS(read_waveform("/nonexistent/dir/x.csv"), IoError);
  }

  TEST_CASE("manifest round trip") {
    ClipRecord a;
    a.id = "clip_0000";
    a.bvp = "clip_0000.bvp.csv";
    a.x_enc = "clip_0000.xenc.csv";
    a.pyramid = "clip_0000.pyr.jsonl";
    a.hr_bpm = 71.25;
    a.snr_db = kInf;
    a.scene.lighting = "dim";
    a.scene.motion = true;
    a.scene.skin_tone = "IV";
    a.seed = 0xffffffffffffffffULL;
    ClipRecord b = a;
    b.id = "clip_0001";
    b.snr_db = 10.0;
    const auto back = parse_manifest(format_manifest({a, b}));
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == a.id);
    CHECK(back[0].hr_bpm == a.hr_bpm);
    CHECK(std::isinf(back[0].snr_db));
    CHECK(back[1].snr_db == 10.0);
    CHECK(back[0].scene.motion);
    CHECK(back[0].scene.skin_tone == "IV");
    CHECK(back[0].seed == a.seed);
    CHECK(format_manifest(back) == format_manifest({a, b}));
    CHECK_THROWS_AS(parse_manifest("{\"id\": 3}\n"), ParseError);
    CHECK_THROWS_AS(parse_manifest("not json\n"), ParseError);
  }

  TEST_CASE("pyramid round trip") {
    const SyntheticClip c = gen_clip(80, SynthConfig{}, 10);
    const auto dir = std::filesystem::temp_directory_path() / "physkit_signal_io";
    std::filesystem::create_directories(dir);
    write_pyramid(dir / "p.jsonl", c.pyramid);
    const auto back = read_pyramid(dir / "p.jsonl");
    REQUIRE(back.levels.size() == c.pyramid.levels.size());
    for (std::size_t i = 0; i < back.levels.size(); ++i) CHECK(back.levels[i] == c.pyramid.levels[i]);
    std::filesystem::remove_all(dir);
  }
}
