// SPDX-License-Identifier: Apache-2.0
#include "physkit/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "physkit/error.hpp"
#include "physkit/rng.hpp"

namespace physkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ParseError("config key '" + key + "' has the wrong type");
  }
}

// Command-line values shared by every subcommand. Each field is applied only
// when its flag was given.
struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  double alpha = 0, beta = 0, snr = 0, lr = 0, wd = 0, fs = 0, hr_min = 0, hr_max = 0;
  int level = 0;
  std::string basis, head;
  std::size_t l_target = 0, prompt_len = 0, protos = 0, vocab = 0, dim = 0, heads = 0, patch = 0, stride = 0,
              lm_layers = 0, steps = 0, batch = 0, clips = 0, frames = 0;
  std::string out;
  // One entry per subcommand that registers the flag.
  std::multimap<std::string, CLI::Option*> opts;

  bool given(const std::string& name) const {
    const auto [lo, hi] = opts.equal_range(name);
    return std::any_of(lo, hi, [](const auto& kv) { return kv.second->count() > 0; });
  }
};

void add_common(CLI::App* sub, Flags& f) {
  f.opts.emplace("config", sub->add_option("--config", f.config, "JSON configuration file"));
  f.opts.emplace("seed", sub->add_option("--seed", f.seed, "Root seed"));
  f.opts.emplace("alpha", sub->add_option("--alpha", f.alpha, "DDS smoothing factor"));
  f.opts.emplace("beta", sub->add_option("--beta", f.beta, "DDS blend weight in [0,1]"));
  f.opts.emplace("level", sub->add_option("--level", f.level, "Wavelet decomposition level"));
  f.opts.emplace("basis", sub->add_option("--basis", f.basis, "Wavelet basis")->check(CLI::IsMember({"haar", "db4"})));
  f.opts.emplace("l_target", sub->add_option("--l-target", f.l_target, "Visual tokens after temporal compression"));
  f.opts.emplace("prompt_len", sub->add_option("--prompt-len", f.prompt_len, "Prompt length L"));
  f.opts.emplace("protos", sub->add_option("--protos", f.protos, "Text prototype count V'"));
  f.opts.emplace("vocab", sub->add_option("--vocab", f.vocab, "Vocabulary size V"));
  f.opts.emplace("dim", sub->add_option("--dim", f.dim, "Model width D"));
  f.opts.emplace("heads", sub->add_option("--heads", f.heads, "Attention heads"));
  f.opts.emplace("patch", sub->add_option("--patch", f.patch, "Signal patch length"));
  f.opts.emplace("stride", sub->add_option("--stride", f.stride, "Signal patch stride"));
  f.opts.emplace("lm_layers", sub->add_option("--lm-layers", f.lm_layers, "Transformer layers"));
  f.opts.emplace("head", sub->add_option("--head", f.head, "Regression head")->check(CLI::IsMember({"per_token", "mean_pool"})));
  f.opts.emplace("snr", sub->add_option("--snr", f.snr, "Synthetic SNR in dB (inf for clean clips)"));
  f.opts.emplace("steps", sub->add_option("--steps", f.steps, "Training steps"));
  f.opts.emplace("lr", sub->add_option("--lr", f.lr, "Learning rate"));
  f.opts.emplace("wd", sub->add_option("--wd", f.wd, "Weight decay"));
  f.opts.emplace("batch", sub->add_option("--batch", f.batch, "Batch size"));
  f.opts.emplace("clips", sub->add_option("--clips", f.clips, "Number of synthetic clips"));
  f.opts.emplace("frames", sub->add_option("--frames", f.frames, "Clip length T"));
  f.opts.emplace("fs", sub->add_option("--fs", f.fs, "Sample rate in Hz"));
  f.opts.emplace("hr_min", sub->add_option("--hr-min", f.hr_min, "Lowest synthetic heart rate (bpm)"));
  f.opts.emplace("hr_max", sub->add_option("--hr-max", f.hr_max, "Highest synthetic heart rate (bpm)"));
  f.opts.emplace("out", sub->add_option("--out", f.out, "Output path"));
}

std::uint64_t parse_seed_env(const char* text) {
  std::uint64_t v = 0;
  const std::string_view s(text);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("PHYSKIT_SEED must be an unsigned integer, got '" + std::string(s) + "'");
  }
  return v;
}

// Defaults, then PHYSKIT_SEED, then the config file, then flags.
RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (const char* env = std::getenv("PHYSKIT_SEED"); env && *env) cfg.seed = parse_seed_env(env);
  if (!f.config.empty()) {
    apply_config_text(cfg, signal::read_text(f.config));
  }
  auto& m = cfg.model;
  if (f.given("seed")) cfg.seed = f.seed;
  if (f.given("alpha")) m.alpha = f.alpha;
  if (f.given("beta")) m.beta_init = f.beta;
  if (f.given("level")) m.level = f.level;
  if (f.given("basis")) m.basis = f.basis;
  if (f.given("l_target")) m.l_target = f.l_target;
  if (f.given("prompt_len")) m.prompt_len = f.prompt_len;
  if (f.given("protos")) m.prototypes = f.protos;
  if (f.given("vocab")) m.vocab = f.vocab;
  if (f.given("dim")) m.dim = f.dim;
  if (f.given("heads")) m.heads = f.heads;
  if (f.given("patch")) m.patch = f.patch;
  if (f.given("stride")) m.stride = f.stride;
  if (f.given("lm_layers")) m.lm_layers = f.lm_layers;
  if (f.given("head")) m.head = head_from_name(f.head);
  if (f.given("frames")) m.frames = f.frames;
  if (f.given("fs")) m.fs = f.fs;
  if (f.given("snr")) cfg.snr_db = f.snr;
  if (f.given("steps")) cfg.train.steps = f.steps;
  if (f.given("lr")) cfg.train.lr = f.lr;
  if (f.given("wd")) cfg.train.weight_decay = f.wd;
  if (f.given("batch")) cfg.train.batch = f.batch;
  if (f.given("clips")) cfg.clips = f.clips;
  if (f.given("hr_min")) cfg.hr_min = f.hr_min;
  if (f.given("hr_max")) cfg.hr_max = f.hr_max;
  return cfg;
}

const std::string& require_out(const Flags& f, const char* what) {
  if (f.out.empty()) throw ContractError(std::string("--out is required: ") + what);
  return f.out;
}

signal::SynthConfig synth_config(const RunConfig& cfg) {
  signal::SynthConfig sc;
  sc.fs = cfg.model.fs;
  sc.frames = cfg.model.frames;
  sc.snr_db = cfg.snr_db;
  sc.levels = cfg.model.levels;
  if (sc.levels.size() != sc.windows.size()) {
    sc.windows.assign(sc.levels.size(), 0);
    for (std::size_t i = 0; i < sc.levels.size(); ++i) sc.windows[i] = 2 * (sc.levels.size() - i) + 1;
  }
  return sc;
}

std::string fmt_clip_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%04zu", i);
  return buf;
}

fs::path resolve_in(const fs::path& manifest, const std::string& rel) {
  const fs::path p(rel);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

std::vector<pipeline::Example> load_examples(const fs::path& manifest, const RunConfig& cfg,
                                             std::vector<signal::ClipRecord>* records = nullptr) {
  const std::vector<signal::ClipRecord> recs = signal::read_manifest(manifest);
  if (recs.empty()) throw ContractError("manifest '" + manifest.string() + "' lists no clips");
  std::vector<pipeline::Example> out;
  for (const auto& r : recs) {
    pipeline::Example e;
    const signal::Waveform x = signal::read_waveform(resolve_in(manifest, r.x_enc));
    const signal::Waveform y = signal::read_waveform(resolve_in(manifest, r.bvp));
    if (x.fs != cfg.model.fs || y.fs != cfg.model.fs) {
      throw ContractError("clip " + r.id + " has sample rate " + num(x.fs) + ", configuration expects " + num(cfg.model.fs));
    }
    e.input.x_enc = x.samples;
    e.target = y.samples;
    e.input.pyramid = signal::read_pyramid(resolve_in(manifest, r.pyramid));
    e.input.scene = r.scene;
    out.push_back(std::move(e));
  }
  if (records) *records = recs;
  return out;
}

std::string metrics_json(const signal::MetricsReport& m) {
  json j;
  j["mae"] = m.mae;
  j["rmse"] = m.rmse;
  j["pearson_r"] = m.pearson_r ? json(*m.pearson_r) : json(nullptr);
  return j.dump(2) + "\n";
}

void print_metrics(std::ostream& out, const signal::MetricsReport& m) {
  out << "mae_bpm=" << num(m.mae) << "\n";
  out << "rmse_bpm=" << num(m.rmse) << "\n";
  out << "pearson_r=" << (m.pearson_r ? num(*m.pearson_r) : std::string("undefined")) << "\n";
}

// --- commands --------------------------------------------------------------

int cmd_synth(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  if (cfg.clips == 0) throw ContractError("synth: --clips must be at least 1");
  const fs::path dir = require_out(f, "output directory");
  const signal::SynthConfig sc = synth_config(cfg);
  const auto clips = pipeline::make_clips(cfg.clips, sc, Rng::derive_seed(cfg.seed, "synth"), cfg.hr_min, cfg.hr_max);
  ensure_dir(dir);
  std::vector<signal::ClipRecord> recs;
  double lo = clips.front().hr_bpm;
  double hi = lo;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& c = clips[i];
    signal::ClipRecord r;
    r.id = fmt_clip_id(i);
    r.bvp = r.id + ".bvp.csv";
    r.x_enc = r.id + ".xenc.csv";
    r.pyramid = r.id + ".pyr.jsonl";
    r.hr_bpm = c.hr_bpm;
    r.snr_db = sc.snr_db;
    r.scene = c.scene;
    r.seed = c.seed;
    signal::write_waveform(dir / r.bvp, {c.fs, c.bvp});
    signal::write_waveform(dir / r.x_enc, {c.fs, c.x_enc});
    signal::write_pyramid(dir / r.pyramid, c.pyramid);
    recs.push_back(std::move(r));
    lo = std::min(lo, c.hr_bpm);
    hi = std::max(hi, c.hr_bpm);
  }
  signal::write_manifest(dir / "manifest.jsonl", recs);
  out << "clips=" << clips.size() << "\n";
  out << "frames=" << sc.frames << "\n";
  out << "fs=" << num(sc.fs) << "\n";
  out << "hr_range_bpm=" << num(lo) << "," << num(hi) << "\n";
  out << "snr_db=" << num(sc.snr_db) << "\n";
  out << "manifest=" << (dir / "manifest.jsonl").string() << "\n";
  return kExitOk;
}

int cmd_dds(const Flags& f, const std::string& in, std::size_t max_lag, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  const signal::Waveform w = signal::read_waveform(in);
  dds::DdsParams p;
  p.alpha = cfg.model.alpha;
  p.beta_raw = dds::DdsParams::raw_for_beta(cfg.model.beta_init);
  p.level = cfg.model.level;
  p.basis = wavelet::WaveletBasis::from_name(cfg.model.basis);
  const dds::DdsTrace tr = dds::dds_forward(w.samples, p);
  if (!f.out.empty()) signal::write_waveform(f.out, {w.fs, tr.z});

  const std::size_t k = max_lag ? max_lag : std::max<std::size_t>(1, std::min<std::size_t>(20, tr.z.size() / 8));
  const dds::StationarityReport r = dds::stationarity_report(tr.z, k, p.alpha);
  out << "length=" << r.length << "\n";
  out << "input_mean=" << num(tr.mean) << "\n";
  out << "input_std=" << num(tr.stddev) << "\n";
  out << "alpha=" << num(p.alpha) << "\n";
  out << "beta=" << num(tr.beta) << "\n";
  out << "mean=" << num(r.mean) << "\n";
  out << "variance=" << num(r.variance) << "\n";
  out << "theoretical_variance=" << num(r.theoretical_variance) << "\n";
  out << "autocorr=";
  for (std::size_t i = 0; i < r.autocorr.size(); ++i) out << (i ? "," : "") << num(r.autocorr[i]);
  out << "\n";
  out << "half_disagreement=" << num(r.half_disagreement) << "\n";
  out << "degenerate=" << (r.degenerate ? "true" : "false") << "\n";
  return kExitOk;
}

int cmd_train(const Flags& f, const std::string& data, const std::string& heldout, double max_mae, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  const fs::path dir = require_out(f, "output directory");
  const auto examples = load_examples(data, cfg);
  pipeline::PhysModel model(cfg.model, Rng::derive_seed(cfg.seed, "model"));
  pipeline::TrainConfig tc = cfg.train;
  tc.seed = Rng::derive_seed(cfg.seed, "train");
  const pipeline::TrainLog log = pipeline::train(model, examples, tc);

  ensure_dir(dir);
  std::string loss_csv = "step,loss\n";
  for (std::size_t i = 0; i < log.losses.size(); ++i) loss_csv += std::to_string(i + 1) + "," + num17(log.losses[i]) + "\n";
  signal::write_text(dir / "loss.csv", loss_csv);
  model.store().save(dir / "checkpoint.jsonl");
  signal::write_text(dir / "run_config.json", config_to_text(cfg));

  json summary;
  summary["steps"] = log.losses.size();
  summary["trainable_parameters"] = model.store().trainable_scalars();
  summary["initial_running_loss"] = log.initial_running_loss;
  summary["final_running_loss"] = log.final_running_loss;
  out << "trainable_parameters=" << model.store().trainable_scalars() << "\n";
  out << "steps=" << log.losses.size() << "\n";
  out << "initial_running_loss=" << num(log.initial_running_loss) << "\n";
  out << "final_running_loss=" << num(log.final_running_loss) << "\n";
  int code = kExitOk;
  if (!heldout.empty()) {
    const auto held = load_examples(heldout, cfg);
    const pipeline::HrEvaluation ev = pipeline::evaluate_hr(model, held);
    summary["heldout"] = json::parse(metrics_json(ev.report));
    print_metrics(out, ev.report);
    if (max_mae > 0.0 && !(ev.report.mae <= max_mae)) code = kExitAcceptance;
  }
  signal::write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  return code;
}

int cmd_predict(const Flags& f, const std::string& data, const std::string& checkpoint, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  const fs::path dir = require_out(f, "output directory");
  std::vector<signal::ClipRecord> recs;
  const auto examples = load_examples(data, cfg, &recs);
  pipeline::PhysModel model(cfg.model, Rng::derive_seed(cfg.seed, "model"));
  model.store().assign_values(ParamStore::load(checkpoint));
  ensure_dir(dir);
  std::vector<signal::ClipRecord> pred;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    signal::ClipRecord r = recs[i];
    const std::vector<double> y = model.predict(examples[i].input);
    r.bvp = r.id + ".pred.csv";
    r.hr_bpm = signal::estimate_hr(y, cfg.model.fs).bpm;
    r.x_enc = resolve_in(data, recs[i].x_enc).string();
    r.pyramid = resolve_in(data, recs[i].pyramid).string();
    signal::write_waveform(dir / r.bvp, {cfg.model.fs, y});
    out << r.id << " " << num(r.hr_bpm) << "\n";
    pred.push_back(std::move(r));
  }
  signal::write_manifest(dir / "manifest.jsonl", pred);
  return kExitOk;
}

int cmd_eval(const Flags& f, const std::string& gt_path, const std::string& pred_path, double max_mae,
             std::ostream& out) {
  const auto gt = signal::read_manifest(gt_path);
  const auto pred = signal::read_manifest(pred_path);
  if (gt.empty()) throw ContractError("eval: ground-truth manifest lists no clips");
  std::map<std::string, const signal::ClipRecord*> by_id;
  for (const auto& r : pred) by_id[r.id] = &r;
  std::vector<double> p_bpm;
  std::vector<double> g_bpm;
  std::string scatter = "x,y\n";
  for (const auto& g : gt) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw ContractError("eval: prediction manifest lacks clip '" + g.id + "'");
    const signal::Waveform gw = signal::read_waveform(resolve_in(gt_path, g.bvp));
    const signal::Waveform pw = signal::read_waveform(resolve_in(pred_path, it->second->bvp));
    g_bpm.push_back(signal::estimate_hr(gw.samples, gw.fs).bpm);
    p_bpm.push_back(signal::estimate_hr(pw.samples, pw.fs).bpm);
    scatter += num17(g_bpm.back()) + "," + num17(p_bpm.back()) + "\n";
  }
  const signal::MetricsReport m = signal::metrics(p_bpm, g_bpm);
  out << "clips=" << gt.size() << "\n";
  print_metrics(out, m);
  if (!f.out.empty()) {
    const fs::path dir = f.out;
    ensure_dir(dir);
    signal::write_text(dir / "metrics.json", metrics_json(m));
    signal::write_text(dir / "hr_scatter.csv", scatter);
  }
  return (max_mae > 0.0 && !(m.mae <= max_mae)) ? kExitAcceptance : kExitOk;
}

int cmd_gradcheck(const Flags& f, double tol, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  GradCheckOptions opts;
  opts.sample_seed = Rng::derive_seed(cfg.seed, "gradcheck.sample");
  const auto checks = pipeline::gradcheck_suite(cfg.seed, opts);
  bool ok = true;
  json rep = json::array();
  for (const auto& c : checks) {
    const bool pass = c.result.max_rel_error < tol;
    ok = ok && pass;
    out << c.module << " max_rel_error=" << num(c.result.max_rel_error) << " checked=" << c.result.checked
        << " worst=" << c.result.worst_param << " " << (pass ? "ok" : "FAIL") << "\n";
    rep.push_back({{"module", c.module},
                   {"max_rel_error", c.result.max_rel_error},
                   {"checked", c.result.checked},
                   {"worst_param", c.result.worst_param}});
  }
  if (!f.out.empty()) signal::write_text(f.out, rep.dump(2) + "\n");
  return ok ? kExitOk : kExitAcceptance;
}

int cmd_hr(const std::vector<std::string>& files, std::ostream& out) {
  if (files.empty()) throw ContractError("hr: no input files");
  for (const auto& p : files) {
    const signal::Waveform w = signal::read_waveform(p);
    const signal::HrEstimate e = signal::estimate_hr(w.samples, w.fs);
    out << p << " bpm=" << num(e.bpm) << " peak_hz=" << num(e.peak_hz) << " resolution_hz=" << num(e.resolution_hz)
        << "\n";
  }
  return kExitOk;
}

int cmd_stats(const Flags& f, const std::string& in, std::ostream& out) {
  const signal::Waveform w = signal::read_waveform(in);
  const cue::StatSummary s = cue::signal_stats(w.samples);
  json j;
  j["min"] = s.min;
  j["max"] = s.max;
  j["median"] = s.median;
  j["trend"] = s.trend;
  j["direction"] = s.direction;
  j["top_lags"] = s.top_lags;
  const std::string text = j.dump(2) + "\n";
  if (!f.out.empty()) signal::write_text(f.out, text);
  out << text;
  return kExitOk;
}

}  // namespace

pipeline::HeadKind head_from_name(const std::string& name) {
  if (name == "per_token") return pipeline::HeadKind::per_token;
  if (name == "mean_pool") return pipeline::HeadKind::mean_pool;
  throw ContractError("unknown head '" + name + "' (expected per_token or mean_pool)");
}

std::string head_name(pipeline::HeadKind kind) {
  return kind == pipeline::HeadKind::per_token ? "per_token" : "mean_pool";
}

void apply_config_text(RunConfig& cfg, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: top level must be a JSON object");
  auto& m = cfg.model;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") cfg.seed = get_as<std::uint64_t>(v, key);
    else if (key == "alpha") m.alpha = get_as<double>(v, key);
    else if (key == "beta_init") m.beta_init = get_as<double>(v, key);
    else if (key == "level") m.level = get_as<int>(v, key);
    else if (key == "basis") m.basis = get_as<std::string>(v, key);
    else if (key == "l_target") m.l_target = get_as<std::size_t>(v, key);
    else if (key == "compress_time") m.compress_time = get_as<bool>(v, key);
    else if (key == "prompt_len") m.prompt_len = get_as<std::size_t>(v, key);
    else if (key == "vocab") m.vocab = get_as<std::size_t>(v, key);
    else if (key == "protos") m.prototypes = get_as<std::size_t>(v, key);
    else if (key == "dim") m.dim = get_as<std::size_t>(v, key);
    else if (key == "heads") m.heads = get_as<std::size_t>(v, key);
    else if (key == "patch") m.patch = get_as<std::size_t>(v, key);
    else if (key == "stride") m.stride = get_as<std::size_t>(v, key);
    else if (key == "lm_layers") m.lm_layers = get_as<std::size_t>(v, key);
    else if (key == "head") m.head = head_from_name(get_as<std::string>(v, key));
    else if (key == "frames") m.frames = get_as<std::size_t>(v, key);
    else if (key == "fs") m.fs = get_as<double>(v, key);
    else if (key == "levels") {
      m.levels.clear();
      for (const auto& hw : get_as<std::vector<std::vector<std::size_t>>>(v, key)) {
        if (hw.size() != 2) throw ParseError("config key 'levels' expects [height, width] pairs");
        m.levels.push_back({hw[0], hw[1]});
      }
    } else if (key == "lr") cfg.train.lr = get_as<double>(v, key);
    else if (key == "weight_decay") cfg.train.weight_decay = get_as<double>(v, key);
    else if (key == "batch") cfg.train.batch = get_as<std::size_t>(v, key);
    else if (key == "steps") cfg.train.steps = get_as<std::size_t>(v, key);
    else if (key == "window") cfg.train.window = get_as<std::size_t>(v, key);
    else if (key == "clips") cfg.clips = get_as<std::size_t>(v, key);
    else if (key == "snr_db") cfg.snr_db = v.is_null() ? std::numeric_limits<double>::infinity() : get_as<double>(v, key);
    else if (key == "hr_min") cfg.hr_min = get_as<double>(v, key);
    else if (key == "hr_max") cfg.hr_max = get_as<double>(v, key);
    else throw ParseError("config: unknown key '" + key + "'");
  }
}

std::string config_to_text(const RunConfig& cfg) {
  const auto& m = cfg.model;
  json j;
  j["seed"] = cfg.seed;
  j["alpha"] = m.alpha;
  j["beta_init"] = m.beta_init;
  j["level"] = m.level;
  j["basis"] = m.basis;
  j["l_target"] = m.l_target;
  j["compress_time"] = m.compress_time;
  j["prompt_len"] = m.prompt_len;
  j["vocab"] = m.vocab;
  j["protos"] = m.prototypes;
  j["dim"] = m.dim;
  j["heads"] = m.heads;
  j["patch"] = m.patch;
  j["stride"] = m.stride;
  j["lm_layers"] = m.lm_layers;
  j["head"] = head_name(m.head);
  j["frames"] = m.frames;
  j["fs"] = m.fs;
  json levels = json::array();
  for (const auto& l : m.levels) levels.push_back({l.height, l.width});
  j["levels"] = levels;
  j["lr"] = cfg.train.lr;
  j["weight_decay"] = cfg.train.weight_decay;
  j["batch"] = cfg.train.batch;
  j["steps"] = cfg.train.steps;
  j["window"] = cfg.train.window;
  j["clips"] = cfg.clips;
  j["snr_db"] = std::isfinite(cfg.snr_db) ? json(cfg.snr_db) : json(nullptr);
  j["hr_min"] = cfg.hr_min;
  j["hr_max"] = cfg.hr_max;
  return j.dump(2) + "\n";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-domain rPPG toolkit: synthesis, stationarization, training and evaluation"};
  app.name("physkit");
  app.require_subcommand(1);

  Flags f;
  std::string in;
  std::string data;
  std::string heldout;
  std::string checkpoint;
  std::string gt;
  std::string pred;
  std::vector<std::string> files;
  std::size_t max_lag = 0;
  double max_mae = 0.0;
  double tol = 1e-4;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset and its manifest");
  add_common(synth, f);

  auto* dds_cmd = app.add_subcommand("dds", "Stationarize a waveform and report its statistics");
  add_common(dds_cmd, f);
  dds_cmd->add_option("input,--in", in, "Waveform CSV")->required();
  dds_cmd->add_option("--max-lag", max_lag, "Largest autocorrelation lag reported");

  auto* train = app.add_subcommand("train", "Train the model on a dataset manifest");
  add_common(train, f);
  train->add_option("--data", data, "Training manifest")->required();
  train->add_option("--heldout", heldout, "Held-out manifest for HR metrics");
  train->add_option("--max-mae", max_mae, "Exit with code 2 when held-out MAE exceeds this");

  auto* predict = app.add_subcommand("predict", "Predict waveforms with a trained checkpoint");
  add_common(predict, f);
  predict->add_option("--data", data, "Input manifest")->required();
  predict->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();

  auto* eval = app.add_subcommand("eval", "Compare predicted and reference heart rates");
  add_common(eval, f);
  eval->add_option("--gt", gt, "Reference manifest")->required();
  eval->add_option("--pred", pred, "Prediction manifest")->required();
  eval->add_option("--max-mae", max_mae, "Exit with code 2 when MAE exceeds this");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks of every module");
  add_common(gradcheck, f);
  gradcheck->add_option("--tol", tol, "Largest accepted relative error");

  auto* hr = app.add_subcommand("hr", "Estimate heart rate of waveform files");
  add_common(hr, f);
  hr->add_option("files", files, "Waveform CSV files")->required();

  auto* show = app.add_subcommand("config", "Print the effective configuration");
  add_common(show, f);

  auto* stats = app.add_subcommand("stats", "Statistical cue record of a waveform");
  add_common(stats, f);
  stats->add_option("input,--in", in, "Waveform CSV")->required();

  std::vector<const char*> argv{"physkit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (synth->parsed()) return cmd_synth(f, out);
    if (dds_cmd->parsed()) return cmd_dds(f, in, max_lag, out);
    if (train->parsed()) return cmd_train(f, data, heldout, max_mae, out);
    if (predict->parsed()) return cmd_predict(f, data, checkpoint, out);
    if (eval->parsed()) return cmd_eval(f, gt, pred, max_mae, out);
    if (gradcheck->parsed()) return cmd_gradcheck(f, tol, out);
    if (hr->parsed()) return cmd_hr(files, out);
    if (stats->parsed()) return cmd_stats(f, in, out);
    if (show->parsed()) {
      out << config_to_text(resolve(f));
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace physkit::cli
