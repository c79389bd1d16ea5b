// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "physkit/aggregator.hpp"
#include "physkit/attention.hpp"
#include "physkit/cli.hpp"
#include "physkit/cue.hpp"
#include "physkit/dds.hpp"
#include "physkit/pipeline.hpp"
#include "physkit/rng.hpp"
#include "physkit/signal.hpp"
#include "physkit/wavelet.hpp"

using namespace physkit;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

void note(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + what;
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// --- 1 ---------------------------------------------------------------------

Outcome dds_stationarity() {
  Outcome o;
  Rng rng(2024);
  std::vector<double> x(8192);
  for (double& v : x) v = rng.normal();
  dds::DdsParams p;
  p.alpha = 0.8;
  p.beta_raw = dds::DdsParams::raw_for_beta(0.0);
  const dds::DdsTrace tr = dds::dds_forward(x, p);
  const dds::StationarityReport r = dds::stationarity_report(tr.z, 16, p.alpha);
  const double target = 0.8 / 1.2;
  note(o, std::abs(r.mean) < 0.05, "mean " + fmt("%.4f", r.mean));
  note(o, std::abs(r.variance - target) <= 0.1 * target, "variance " + fmt("%.4f", r.variance));
  note(o, std::abs(r.autocorr[0] - 0.2) <= 0.05, "lag-1 " + fmt("%.4f", r.autocorr[0]));
  note(o, r.half_disagreement < 0.05, "half-window " + fmt("%.4f", r.half_disagreement));
  o.detail = "mean=" + fmt("%.4f", r.mean) + " var=" + fmt("%.4f", r.variance) + " r1=" + fmt("%.4f", r.autocorr[0]) +
             " half=" + fmt("%.4f", r.half_disagreement) + (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --- 2 ---------------------------------------------------------------------

Outcome wavelet_reconstruction() {
  Outcome o;
  double worst = 0.0;
  for (const auto& basis : {wavelet::WaveletBasis::haar(), wavelet::WaveletBasis::db4()}) {
    for (std::size_t n : {8u, 128u, 1024u}) {
      for (int j = 1; j <= 3; ++j) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
          Rng rng(seed * 7919 + n + static_cast<std::uint64_t>(j));
          std::vector<double> x(n);
          for (double& v : x) v = rng.normal();
          const auto y = wavelet::idwt(wavelet::dwt(x, basis, j), basis);
          double num = 0, den = 0;
          for (std::size_t i = 0; i < n; ++i) {
            num += (y[i] - x[i]) * (y[i] - x[i]);
            den += x[i] * x[i];
          }
          worst = std::max(worst, std::sqrt(num / den));
        }
      }
    }
  }
  note(o, worst < 1e-10, "relative error too large");
  o.detail = "max_rel_l2=" + fmt("%.3e", worst) + (o.pass ? "" : " [" + o.detail + "]");
  return o;
}

// --- 3 ---------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  std::ostringstream out, err;
  const int code = cli::run({"gradcheck", "--seed", "0"}, out, err);
  note(o, code == cli::kExitOk, "exit code " + std::to_string(code));
  std::istringstream lines(out.str());
  std::string line, summary;
  while (std::getline(lines, line)) {
    const auto sp = line.find(' ');
    const auto eq = line.find("max_rel_error=");
    if (sp == std::string::npos || eq == std::string::npos) continue;
    const double e = std::stod(line.substr(eq + 14));
    summary += (summary.empty() ? "" : " ") + line.substr(0, sp) + "=" + fmt("%.2e", e);
    note(o, e < 1e-4, line.substr(0, sp) + " above 1e-4");
  }
  o.detail = summary + (o.pass ? "" : " [" + o.detail + "]");
  return o;
}

// --- 4 ---------------------------------------------------------------------

Outcome structural_identities() {
  Outcome o;
  Rng rng(4);
  // gamma2 = 0 at initialization: the fused output is the deepest level.
  {
    ParamStore store;
    aggregator::AggregatorConfig cfg;
    cfg.levels = {{4, 4}, {2, 2}, {1, 2}};
    cfg.frames = 32;
    cfg.l_target = 8;
    cfg.dim = 8;
    cfg.heads = 2;
    const aggregator::VisionAggregator agg(store, "agg", cfg, rng);
    store.get(agg.gamma1_name()).value = Tensor::randn({8}, rng);
    aggregator::FeaturePyramid pyr;
    for (const auto& l : cfg.levels) pyr.levels.push_back(Tensor::randn({2, 32, l.height, l.width}, rng));
    Tape tape;
    aggregator::AggregateTrace tr;
    const Tensor out = agg.aggregate(tape, store, pyr, &tr).value();
    note(o, out == tr.projected.back(), "gamma2=0 does not reduce to F_M");
  }
  // Blend endpoints.
  {
    std::vector<double> x(256);
    for (double& v : x) v = rng.normal();
    dds::DdsParams p;
    p.beta_raw = dds::DdsParams::raw_for_beta(0.0);
    const dds::DdsTrace t0 = dds::dds_forward(x, p);
    p.beta_raw = dds::DdsParams::raw_for_beta(1.0);
    const dds::DdsTrace t1 = dds::dds_forward(x, p);
    note(o, t0.z == t0.z_time, "beta=0 differs from z_time");
    note(o, t1.z == t1.z_fre, "beta=1 differs from z_fre");
  }
  // Self attention is cross attention of a sequence with itself.
  {
    ParamStore store;
    const auto ap = attention::AttentionParams::create(store, "a", 8, 2, rng);
    Tape tape;
    const Var x = tape.constant(Tensor::randn({2, 5, 8}, rng));
    const auto w = attention::bind(tape, store, ap);
    note(o, attention::self_attention(x, w).value() == attention::cross_attention(x, x, w).value(),
         "self != cross(x, x)");
  }
  // Softmax rows.
  {
    const Tensor s = softmax_rows(Tensor::randn({64, 33}, rng, 10.0));
    double worst = 0;
    for (std::size_t r = 0; r < 64; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 33; ++c) sum += s[r * 33 + c];
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    note(o, worst <= 1e-12, "softmax row sum off by " + fmt("%.2e", worst));
  }
  // Frozen vocabulary through the full model.
  {
    const auto cfg = pipeline::ModelConfig::tiny();
    pipeline::PhysModel model(cfg, 5);
    pipeline::Sample s;
    s.x_enc.resize(cfg.frames);
    for (double& v : s.x_enc) v = rng.normal();
    for (const auto& l : cfg.levels) s.pyramid.levels.push_back(Tensor::randn({1, cfg.frames, l.height, l.width}, rng));
    const pipeline::Sample* batch[] = {&s};
    Tape tape;
    backward(mse(model.forward(tape, batch), tape.constant(Tensor::randn({1, cfg.frames}, rng))), model.store());
    const auto& g = model.store().get(pipeline::PhysModel::kVocab).grad;
    note(o, std::all_of(g.data().begin(), g.data().end(), [](double v) { return v == 0.0; }),
         "frozen vocabulary received gradient");
  }
  if (o.pass) o.detail = "gamma2=0, beta endpoints, self==cross, softmax rows, frozen E";
  return o;
}

// --- 5 ---------------------------------------------------------------------

Outcome stats_oracle() {
  Outcome o;
  Rng rng(5);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 4 + rng.below(200);
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();
    if (trial % 10 == 0) {
      for (double& v : x) v = std::round(2 * v);
    }
    const cue::StatSummary s = cue::signal_stats(x);

    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    const double med = n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
    double tr = 0;
    for (std::size_t i = 1; i < n; ++i) tr += x[i] - x[i - 1];
    const int dir = tr > 0 ? 1 : (tr < 0 ? -1 : 0);
    bool ok = s.min == sorted.front() && s.max == sorted.back() && s.median == med && s.trend == tr &&
              s.direction == dir;

    double m = 0;
    for (double v : x) m += v;
    m /= double(n);
    double den = 0;
    for (double v : x) den += (v - m) * (v - m);
    std::vector<std::pair<double, std::size_t>> r;
    for (std::size_t tau = 1; tau <= n / 2; ++tau) {
      double num = 0;
      for (std::size_t t = 0; t + tau < n; ++t) num += (x[t] - m) * (x[t + tau] - m);
      r.push_back({den > 0 ? num / den : 0.0, tau});
    }
    std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const std::size_t k = std::min<std::size_t>(cue::kTopLags, r.size());
    ok = ok && s.top_lags.size() == k;
    std::map<std::size_t, double> value;
    for (const auto& [v, tau] : r) value[tau] = v;
    for (std::size_t i = 0; ok && i < k; ++i) {
      // Same lag, or a different lag whose autocorrelation ties within 1e-9.
      ok = s.top_lags[i] == r[i].second || std::abs(value[s.top_lags[i]] - r[i].first) <= 1e-9;
    }
    if (!ok) ++mismatches;
  }
  note(o, mismatches == 0, std::to_string(mismatches) + " mismatching sequences");
  o.detail = "sequences=1000 mismatches=" + std::to_string(mismatches);
  return o;
}

// --- 6 ---------------------------------------------------------------------

Outcome toy_training() {
  Outcome o;
  signal::SynthConfig sc;
  sc.snr_db = 10.0;
  const auto train_set = pipeline::to_examples(pipeline::make_clips(64, sc, Rng::derive_seed(6, "train-clips")));
  signal::SynthConfig clean = sc;
  clean.snr_db = std::numeric_limits<double>::infinity();
  const auto held = pipeline::to_examples(pipeline::make_clips(16, clean, Rng::derive_seed(6, "heldout-clips")));

  pipeline::PhysModel model(pipeline::ModelConfig{}, Rng::derive_seed(6, "model"));
  pipeline::TrainConfig tc;
  tc.seed = Rng::derive_seed(6, "train");
  const pipeline::TrainLog log = pipeline::train(model, train_set, tc);
  const pipeline::HrEvaluation ev = pipeline::evaluate_hr(model, held);
  const double ratio = log.final_running_loss / log.initial_running_loss;
  note(o, ratio <= 0.5, "loss ratio " + fmt("%.3f", ratio));
  note(o, ev.report.mae <= 3.0, "held-out MAE " + fmt("%.2f", ev.report.mae));
  o.detail = "loss " + fmt("%.4f", log.initial_running_loss) + "->" + fmt("%.4f", log.final_running_loss) +
             " ratio=" + fmt("%.3f", ratio) + " heldout_mae_bpm=" + fmt("%.3f", ev.report.mae) +
             (o.pass ? "" : " [" + o.detail + "]");
  return o;
}

// --- 7 ---------------------------------------------------------------------

Outcome hr_sanity() {
  Outcome o;
  signal::SynthConfig clean;
  clean.snr_db = std::numeric_limits<double>::infinity();
  std::string summary;
  for (double hr : {50.0, 72.0, 90.0, 120.0, 150.0}) {
    const auto clip = signal::gen_clip(hr, clean, Rng::derive_seed(7, "hr" + std::to_string(int(hr))));
    const auto e = signal::estimate_hr(clip.bvp, clip.fs);
    summary += fmt(" %.0f", hr) + "->" + fmt("%.1f", e.bpm);
    note(o, std::abs(e.bpm - hr) <= 60.0 * e.resolution_hz, fmt("hr %.0f missed", hr));
  }
  Rng rng(7);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(32);
    std::vector<double> p(n), g(n);
    for (std::size_t k = 0; k < n; ++k) {
      p[k] = rng.uniform(40, 160);
      g[k] = rng.uniform(40, 160);
    }
    const auto m = signal::metrics(p, g);
    if (!(m.rmse >= m.mae)) ++bad;
  }
  note(o, bad == 0, std::to_string(bad) + " pairs with RMSE < MAE");
  const std::vector<double> aligned{55, 63.5, 71, 88, 101, 140};
  const auto m = signal::metrics(aligned, aligned);
  note(o, m.pearson_r && *m.pearson_r == 1.0, "aligned lists do not give R=1");
  o.detail = "bpm" + summary + " rmse>=mae on 1000 pairs, R=" + (m.pearson_r ? fmt("%.15g", *m.pearson_r) : "undef") +
             (o.pass ? "" : " [" + o.detail + "]");
  return o;
}

// --- 8 ---------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = signal::read_text(e.path());
  }
  return files;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
  return s;
}

Outcome cli_determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "physkit_acceptance_determinism";
  fs::remove_all(root);
  const fs::path shared = root / "shared";
  fs::create_directories(shared);
  {
    std::ostringstream sink;
    cli::run({"synth", "--clips", "4", "--seed", "8", "--frames", "128", "--out", (shared / "data").string()}, sink, sink);
  }
  const std::string data = (shared / "data" / "manifest.jsonl").string();
  const std::string wave = (shared / "data" / "clip_0000.xenc.csv").string();
  const std::vector<std::string> tiny{"--frames", "128", "--dim", "8", "--heads", "2", "--vocab", "64",
                                      "--protos", "8", "--prompt-len", "4", "--l-target", "8", "--level", "2",
                                      "--seed", "8"};

  const std::vector<std::pair<std::string, std::function<std::vector<std::string>(const std::string&)>>> commands{
      {"synth", [](const std::string& out) { return std::vector<std::string>{"synth", "--clips", "8", "--seed", "8", "--out", out}; }},
      {"dds", [&](const std::string& out) { return std::vector<std::string>{"dds", wave, "--out", out + ".csv"}; }},
      {"stats", [&](const std::string& out) { return std::vector<std::string>{"stats", wave, "--out", out + ".json"}; }},
      {"hr", [&](const std::string&) { return std::vector<std::string>{"hr", wave}; }},
      {"config", [&](const std::string&) { return std::vector<std::string>{"config", "--seed", "8"}; }},
      {"gradcheck", [](const std::string& out) { return std::vector<std::string>{"gradcheck", "--seed", "8", "--out", out + ".json"}; }},
      {"train", [&](const std::string& out) {
         std::vector<std::string> a{"train", "--data", data, "--heldout", data, "--steps", "4", "--batch", "2", "--out", out};
         a.insert(a.end(), tiny.begin(), tiny.end());
         return a;
       }},
      {"eval", [&](const std::string& out) { return std::vector<std::string>{"eval", "--gt", data, "--pred", data, "--out", out}; }},
  };

  std::string summary;
  for (const auto& [name, make] : commands) {
    std::string stdout_text[2];
    std::map<std::string, std::string> files[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path dir = root / (name + std::to_string(rep));
      fs::create_directories(dir);
      const std::string out = (dir / "out").string();
      std::ostringstream os, es;
      const int code = cli::run(make(out), os, es);
      note(o, code == cli::kExitOk, name + " exited " + std::to_string(code) + ": " + es.str());
      stdout_text[rep] = replace_all(os.str(), dir.string(), "<dir>");
      files[rep] = snapshot(dir);
    }
    const bool same = stdout_text[0] == stdout_text[1] && files[0] == files[1];
    note(o, same, name + " output differs between runs");
    summary += (summary.empty() ? "" : " ") + name + "=" + (same ? "same" : "DIFF") + "(" +
               std::to_string(files[0].size()) + " files)";
  }
  // The checkpoint of one run drives predict twice.
  {
    const std::string ckpt = (root / "train0" / "out" / "checkpoint.jsonl").string();
    std::map<std::string, std::string> files[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path dir = root / ("predict" + std::to_string(rep));
      std::vector<std::string> a{"predict", "--data", data, "--checkpoint", ckpt, "--out", (dir / "out").string()};
      a.insert(a.end(), tiny.begin(), tiny.end());
      std::ostringstream os, es;
      note(o, cli::run(a, os, es) == cli::kExitOk, "predict failed: " + es.str());
      files[rep] = snapshot(dir);
    }
    const bool same = files[0] == files[1] && !files[0].empty();
    note(o, same, "predict output differs between runs");
    summary += std::string(" predict=") + (same ? "same" : "DIFF");
  }
  fs::remove_all(root);
  o.detail = summary + (o.pass ? "" : " [" + o.detail + "]");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0 when no runtime bound applies
  Outcome (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "dds stationarity", 1.0, dds_stationarity},
      {2, "wavelet perfect reconstruction", 1.0, wavelet_reconstruction},
      {3, "gradient correctness", 30.0, gradient_correctness},
      {4, "structural identities", 0.0, structural_identities},
      {5, "statistical cue oracle", 0.0, stats_oracle},
      {6, "toy end-to-end training", 600.0, toy_training},
      {7, "heart-rate estimator sanity", 0.0, hr_sanity},
      {8, "cli determinism", 0.0, cli_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      o.pass = false;
      o.detail += fmt(" [runtime over %.0f s]", c.limit_s);
    }
    std::printf("%s criterion %d (%s): %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
