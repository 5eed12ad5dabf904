#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "telecg/errors.hpp"
#include "telecg/signal.hpp"

using namespace telecg;

namespace {

constexpr double kPi = std::numbers::pi;

// Values produced by tests/oracles/signal_oracle.py (mpmath, 40 digits).
constexpr double kBeatAtR = 0.9838101485420561;
constexpr double kBeatAtMinusPi = 9.6858532427579978e-6;
constexpr double kDequant2048 = 0.4028320312499112;
constexpr double kDequant0 = -1649.59716796875;
constexpr double kHalfLsb = 0.40283203125;

std::vector<double> values(const std::vector<AnalogSample>& s) {
  std::vector<double> v;
  for (const auto& x : s) v.push_back(x.value_mv);
  return v;
}

std::size_t autocorr_peak(const std::vector<double>& x, std::size_t min_lag, std::size_t max_lag) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  std::size_t best = min_lag;
  double best_r = -1e300;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
    double r = 0.0;
    for (std::size_t i = 0; i + lag < x.size(); ++i) r += (x[i] - mean) * (x[i + lag] - mean);
    r /= static_cast<double>(x.size() - lag);
    if (r > best_r) {
      best_r = r;
      best = lag;
    }
  }
  return best;
}

}  // namespace

TEST_SUITE("signal") {
  TEST_CASE("beat_value at the R center matches the oracle") {
    CHECK(beat_value(SynthParams{}, 0.0) == doctest::Approx(kBeatAtR).epsilon(1e-12));
    CHECK(beat_value(SynthParams{}, -kPi) == doctest::Approx(kBeatAtMinusPi).epsilon(1e-9));
  }

  TEST_CASE("zero morphology gives zero everywhere") {
    SynthParams p;
    for (auto& w : p.waves) w.amplitude_mv = 0.0;
    p.baseline_mv = 0.0;
    for (double ph = -kPi; ph < kPi; ph += 0.37) CHECK(beat_value(p, ph) == 0.0);
  }

  TEST_CASE("beat_value is a pure function of its inputs") {
    SynthParams p;
    const SynthParams copy = p;
    for (double ph : {-3.0, -1.0, 0.0, 0.5, 2.9}) CHECK(beat_value(p, ph) == beat_value(copy, ph));
  }

  TEST_CASE("wrap_phase maps into [-pi, pi)") {
    CHECK(wrap_phase(kPi) == doctest::Approx(-kPi));
    CHECK(wrap_phase(3 * kPi) == doctest::Approx(-kPi));
    CHECK(wrap_phase(-kPi) == doctest::Approx(-kPi));
    CHECK(wrap_phase(0.25) == doctest::Approx(0.25));
    for (double x = -20.0; x < 20.0; x += 0.731) {
      const double w = wrap_phase(x);
      CHECK(w >= -kPi);
      CHECK(w < kPi);
    }
  }

  TEST_CASE("parameter validation") {
    SynthParams p;
    p.heart_rate_bpm = 19.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    p.heart_rate_bpm = 301.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    p = SynthParams{};
    p.waves[1].center_rad = p.waves[3].center_rad;  // Q after R
    CHECK_THROWS_AS(p.validate(), ValidationError);
    p = SynthParams{};
    p.waves[2].width_rad = 0.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    p = SynthParams{};
    p.lead_events.push_back({3.0, 2.0, LeadWhich::LoPlus});
    CHECK_THROWS_AS(p.validate(), ValidationError);
    CHECK_NOTHROW(SynthParams{}.validate());
  }

  TEST_CASE("60 s at 250 Hz is exactly 15000 samples") {
    CHECK(generate_analog(SynthParams{}, 250.0, 60.0).size() == 15000);
  }

  TEST_CASE("sample count is floor(rate * duration)") {
    for (double rate : {50.0, 125.0, 250.0, 333.0, 500.0, 1000.0}) {
      for (double d : {0.1, 0.5, 1.0, 2.7, 10.0, 0.013}) {
        const auto expect = static_cast<std::size_t>(std::floor(rate * d + 1e-9));
        CHECK(generate_analog(SynthParams{}, rate, d).size() == expect);
        CHECK(sample_count(rate, d) == expect);
      }
    }
  }

  TEST_CASE("samples are uniformly spaced at 1/rate") {
    const auto s = generate_analog(SynthParams{}, 250.0, 2.0);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].t_s == doctest::Approx(static_cast<double>(i) / 250.0));
  }

  TEST_CASE("identical parameters give bit-identical output") {
    SynthParams p;
    p.noise.white_sigma_mv = 0.1;
    p.noise.baseline_wander_amp_mv = 0.2;
    p.noise.mains_amp_mv = 0.05;
    p.seed = 42;
    const auto a = values(generate_analog(p, 250.0, 5.0));
    const auto b = values(generate_analog(p, 250.0, 5.0));
    CHECK(a == b);
    p.seed = 43;
    CHECK(values(generate_analog(p, 250.0, 5.0)) != a);
  }

  TEST_CASE("noise-free output repeats every rate*60/bpm samples") {
    for (double hr : {60.0, 120.0, 75.0}) {
      SynthParams p;
      p.heart_rate_bpm = hr;
      const auto v = values(generate_analog(p, 250.0, 10.0));
      const auto period = static_cast<std::size_t>(std::llround(250.0 * 60.0 / hr));
      for (std::size_t i = 0; i + period < v.size(); ++i) {
        REQUIRE(std::abs(v[i] - v[i + period]) <= 1e-9);
      }
    }
  }

  TEST_CASE("autocorrelation peaks at the beat period") {
    SynthParams p;
    CHECK(autocorr_peak(values(generate_analog(p, 250.0, 30.0)), 100, 400) == 250);
    p.heart_rate_bpm = 72.0;
    CHECK(autocorr_peak(values(generate_analog(p, 250.0, 30.0)), 100, 400) == 208);
  }

  TEST_CASE("lead event flags exactly the covered sample indices") {
    SynthParams p;
    p.lead_events.push_back({2.0, 3.0, LeadWhich::LoPlus});
    const auto s = generate_analog(p, 250.0, 5.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool inside = i >= 500 && i < 750;
      REQUIRE((s[i].lead_state & lead::kPlus) == (inside ? lead::kPlus : 0));
      REQUIRE((s[i].lead_state & lead::kMinus) == 0);
    }
  }

  TEST_CASE("overlapping lead events of both polarities") {
    SynthParams p;
    p.lead_events.push_back({1.0, 2.0, LeadWhich::LoMinus});
    p.lead_events.push_back({1.5, 2.5, LeadWhich::Both});
    const auto s = generate_analog(p, 100.0, 3.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double t = static_cast<double>(i) / 100.0;
      const bool plus = t >= 1.5 && t < 2.5;
      const bool minus = (t >= 1.0 && t < 2.0) || plus;
      REQUIRE(((s[i].lead_state & lead::kMinus) != 0) == minus);
      REQUIRE(((s[i].lead_state & lead::kPlus) != 0) == plus);
    }
  }

  TEST_CASE("lead-off pins the value to the positive rail") {
    SynthParams p;
    p.lead_events.push_back({1.0, 1.2, LeadWhich::LoPlus});
    const AdcConfig adc;
    const auto s = generate_analog(p, 250.0, 2.0, adc);
    CHECK(quantize(s[260].value_mv, adc) == adc.max_code());
    CHECK(quantize(s[100].value_mv, adc) < adc.max_code());
  }

  TEST_CASE("parse_lead_which accepts the documented spellings") {
    CHECK(parse_lead_which("plus") == LeadWhich::LoPlus);
    CHECK(parse_lead_which("minus") == LeadWhich::LoMinus);
    CHECK(parse_lead_which("both") == LeadWhich::Both);
    CHECK(parse_lead_which("LoPlus") == LeadWhich::LoPlus);
    CHECK_THROWS_AS(parse_lead_which("sideways"), ValidationError);
    CHECK(lead_bits(LeadWhich::Both) == lead::kMask);
  }

  TEST_CASE("quantize named values") {
    const AdcConfig adc;
    CHECK(quantize(0.0, adc) == 2048);
    CHECK(quantize(1650.0, adc) == 4095);
    CHECK(quantize(5000.0, adc) == 4095);
    CHECK(quantize(-1650.1, adc) == 0);
    CHECK(quantize(-1e9, adc) == 0);
  }

  TEST_CASE("dequantize named values") {
    const AdcConfig adc;
    CHECK(dequantize(2048, adc) == doctest::Approx(kDequant2048).epsilon(1e-12));
    CHECK(dequantize(0, adc) == doctest::Approx(kDequant0).epsilon(1e-12));
    CHECK(dequantize(4095, adc) == doctest::Approx(-kDequant0).epsilon(1e-12));
    CHECK_THROWS_AS(dequantize(4096, adc), ValidationError);
  }

  TEST_CASE("round trip error stays within half an LSB") {
    const AdcConfig adc;
    CHECK(adc.lsb_mv() / 2.0 == doctest::Approx(kHalfLsb));
    double worst = 0.0;
    for (double x = -1649.0; x < 1649.0; x += 0.0137) {
      worst = std::max(worst, std::abs(dequantize(quantize(x, adc), adc) - x));
    }
    CHECK(worst <= kHalfLsb + 1e-9);
    CHECK(worst > kHalfLsb - 0.01);
  }

  TEST_CASE("quantize is non-decreasing") {
    const AdcConfig adc;
    std::uint32_t prev = 0;
    for (double x = -1700.0; x < 1700.0; x += 0.05) {
      const auto c = quantize(x, adc);
      REQUIRE(c >= prev);
      prev = c;
    }
  }

  TEST_CASE("other ADC resolutions") {
    AdcConfig adc{3.3, 10, 1.65};
    CHECK(adc.max_code() == 1023);
    CHECK(quantize(0.0, adc) == 512);
    AdcConfig bad{3.3, 17, 1.65};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    AdcConfig bad_base{3.3, 12, 4.0};
    CHECK_THROWS_AS(bad_base.validate(), ValidationError);
  }

  TEST_CASE("gain scales the morphology") {
    SynthParams p;
    const auto unit = values(generate_analog(p, 250.0, 2.0));
    p.gain = 2.5;
    const auto scaled = values(generate_analog(p, 250.0, 2.0));
    for (std::size_t i = 0; i < unit.size(); ++i) REQUIRE(scaled[i] == doctest::Approx(2.5 * unit[i]));
  }

  TEST_CASE("streaming synthesizer matches the batch generator") {
    SynthParams p;
    p.noise.white_sigma_mv = 0.05;
    p.lead_events.push_back({0.5, 0.8, LeadWhich::LoMinus});
    const auto batch = generate_analog(p, 250.0, 3.0);
    EcgSynthesizer synth(p, 250.0);
    for (const auto& s : batch) {
      const auto x = synth.next();
      REQUIRE(x.value_mv == s.value_mv);
      REQUIRE(x.lead_state == s.lead_state);
    }
  }

  TEST_CASE("analog text round trip") {
    SynthParams p;
    p.noise.white_sigma_mv = 0.1;
    const auto s = generate_analog(p, 250.0, 0.5);
    std::stringstream ss;
    write_analog_text(ss, s);
    const auto back = read_analog_text(ss);
    REQUIRE(back.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(back[i].value_mv == s[i].value_mv);
      CHECK(back[i].t_s == s[i].t_s);
    }
  }

  TEST_CASE("analog text accepts an optional flags column and comments") {
    std::stringstream ss("# t v\n0 0.5\n0.004 -0.25 1\n\n0.008 3\n");
    const auto back = read_analog_text(ss);
    REQUIRE(back.size() == 3);
    CHECK(back[1].value_mv == -0.25);
    CHECK(back[1].lead_state == 1);
    CHECK(back[2].lead_state == 0);
    std::stringstream bad("0.1 abc\n");
    CHECK_THROWS_AS(read_analog_text(bad), ValidationError);
  }
}
