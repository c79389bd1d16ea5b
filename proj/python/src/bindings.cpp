// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "physkit/cli.hpp"
#include "physkit/cue.hpp"
#include "physkit/dds.hpp"
#include "physkit/error.hpp"
#include "physkit/signal.hpp"
#include "physkit/wavelet.hpp"

namespace py = pybind11;
using namespace physkit;

PYBIND11_MODULE(_physkit, m) {
  m.doc() = "physkit C++ core";

  // Translators run newest first, so the base class is registered first.
  const auto& base = py::register_exception<Error>(m, "PhysError");
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<EstimationError>(m, "EstimationError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def(
      "dwt",
      [](const std::vector<double>& x, const std::string& basis, int level) {
        const auto d = wavelet::dwt(x, wavelet::WaveletBasis::from_name(basis), level);
        return py::make_tuple(d.ac, d.dc);
      },
      py::arg("x"), py::arg("basis") = "haar", py::arg("level") = 3,
      "Returns (approximation, [detail bands, finest first]).");
  m.def(
      "idwt",
      [](const std::vector<double>& ac, const std::vector<std::vector<double>>& dc, const std::string& basis) {
        wavelet::Decomposition d;
        d.ac = ac;
        d.dc = dc;
        d.level = static_cast<int>(dc.size());
        d.length = dc.empty() ? ac.size() : 2 * dc.front().size();
        return wavelet::idwt(d, wavelet::WaveletBasis::from_name(basis));
      },
      py::arg("ac"), py::arg("dc"), py::arg("basis") = "haar");

  m.def(
      "dds_forward",
      [](const std::vector<double>& x, double alpha, double beta, int level, const std::string& basis) {
        dds::DdsParams p;
        p.alpha = alpha;
        p.beta_raw = dds::DdsParams::raw_for_beta(beta);
        p.level = level;
        p.basis = wavelet::WaveletBasis::from_name(basis);
        const auto t = dds::dds_forward(x, p);
        py::dict d;
        d["mean"] = t.mean;
        d["stddev"] = t.stddev;
        d["beta"] = t.beta;
        d["z_time"] = t.z_time;
        d["z_fre"] = t.z_fre;
        d["z"] = t.z;
        return d;
      },
      py::arg("x"), py::arg("alpha") = 0.8, py::arg("beta") = 0.5, py::arg("level") = 3, py::arg("basis") = "haar");

  m.def(
      "stationarity_report",
      [](const std::vector<double>& z, std::size_t max_lag, double alpha) {
        const auto r = dds::stationarity_report(z, max_lag, alpha);
        py::dict d;
        d["mean"] = r.mean;
        d["variance"] = r.variance;
        d["theoretical_variance"] = r.theoretical_variance;
        d["autocorr"] = r.autocorr;
        d["half_disagreement"] = r.half_disagreement;
        d["degenerate"] = r.degenerate;
        return d;
      },
      py::arg("z"), py::arg("max_lag"), py::arg("alpha") = 0.8);

  m.def(
      "signal_stats",
      [](const std::vector<double>& x) {
        const auto s = cue::signal_stats(x);
        py::dict d;
        d["min"] = s.min;
        d["max"] = s.max;
        d["median"] = s.median;
        d["trend"] = s.trend;
        d["direction"] = s.direction;
        d["top_lags"] = s.top_lags;
        return d;
      },
      py::arg("x"));

  m.def(
      "gen_clip",
      [](double hr_bpm, std::uint64_t seed, std::size_t frames, double fs, double snr_db) {
        signal::SynthConfig c;
        c.frames = frames;
        c.fs = fs;
        c.snr_db = snr_db;
        const auto clip = signal::gen_clip(hr_bpm, c, seed);
        py::dict d;
        d["hr_bpm"] = clip.hr_bpm;
        d["fs"] = clip.fs;
        d["bvp"] = clip.bvp;
        d["x_enc"] = clip.x_enc;
        d["lighting"] = clip.scene.lighting;
        d["motion"] = clip.scene.motion;
        d["skin_tone"] = clip.scene.skin_tone;
        return d;
      },
      py::arg("hr_bpm"), py::arg("seed"), py::arg("frames") = 128, py::arg("fs") = 30.0,
      py::arg("snr_db") = 10.0);

  m.def(
      "estimate_hr",
      [](const std::vector<double>& w, double fs) {
        const auto e = signal::estimate_hr(w, fs);
        py::dict d;
        d["bpm"] = e.bpm;
        d["peak_hz"] = e.peak_hz;
        d["resolution_hz"] = e.resolution_hz;
        return d;
      },
      py::arg("w"), py::arg("fs"));

  m.def(
      "metrics",
      [](const std::vector<double>& pred, const std::vector<double>& gt) {
        const auto r = signal::metrics(pred, gt);
        py::dict d;
        d["mae"] = r.mae;
        d["rmse"] = r.rmse;
        d["pearson_r"] = r.pearson_r ? py::object(py::float_(*r.pearson_r)) : py::object(py::none());
        return d;
      },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one command line; returns (exit_code, stdout, stderr).");
}
