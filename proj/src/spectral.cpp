#include "urbandit/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

namespace urbandit {

FFTMode FFTMode::parse(const std::string& name, int k) {
  FFTMode m;
  m.k = k;
  if (name == "none")
    m.kind = FFTModeKind::none;
  else if (name == "mean")
    m.kind = FFTModeKind::mean_threshold;
  else if (name == "q80")
    m.kind = FFTModeKind::quantile80;
  else if (name == "topk")
    m.kind = FFTModeKind::topk;
  else
    throw Error("unknown fft_mode '" + name + "' (expected none|mean|q80|topk)");
  if (m.kind == FFTModeKind::topk && k < 1) throw Error("topk_k must be >= 1");
  return m;
}

std::string FFTMode::name() const {
  switch (kind) {
    case FFTModeKind::none: return "none";
    case FFTModeKind::mean_threshold: return "mean";
    case FFTModeKind::quantile80: return "q80";
    case FFTModeKind::topk: return "topk";
  }
  return "?";
}

Mat Spectrum::amplitude() const { return (re.array().square() + im.array().square()).sqrt().matrix(); }

namespace {

class R2CPlans {
 public:
  ~R2CPlans() {
    for (auto& [n, p] : plans_) fftw_destroy_plan(p);
  }

  // Executes a size-n real-to-complex transform of `in` into `out`
  // (n/2 + 1 bins). Planning is serialised; execution on new arrays is
  // thread-safe in FFTW.
  void run(int n, double* in, fftw_complex* out) {
    fftw_plan plan;
    {
      std::lock_guard lock(mu_);
      auto it = plans_.find(n);
      if (it == plans_.end()) {
        std::vector<double> tin(static_cast<std::size_t>(n));
        auto* tout = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        plan = fftw_plan_dft_r2c_1d(n, tin.data(), tout, FFTW_ESTIMATE | FFTW_UNALIGNED);
        fftw_free(tout);
        it = plans_.emplace(n, plan).first;
      }
      plan = it->second;
    }
    fftw_execute_dft_r2c(plan, in, out);
  }

 private:
  std::mutex mu_;
  std::map<int, fftw_plan> plans_;
};

R2CPlans& plans() {
  static R2CPlans p;
  return p;
}

}  // namespace

Spectrum dft_time_axis(const Mat& x) {
  const Index T = x.rows(), S = x.cols();
  if (T < 1) throw Error("dft_time_axis: empty time axis");
  Spectrum sp{Mat(T, S), Mat(T, S)};
  std::vector<double> col(static_cast<std::size_t>(T));
  std::vector<fftw_complex> half(static_cast<std::size_t>(T / 2 + 1));
  for (Index s = 0; s < S; ++s) {
    for (Index t = 0; t < T; ++t) col[static_cast<std::size_t>(t)] = x(t, s);
    plans().run(static_cast<int>(T), col.data(), half.data());
    for (Index k = 0; k <= T / 2; ++k) {
      sp.re(k, s) = half[static_cast<std::size_t>(k)][0];
      sp.im(k, s) = half[static_cast<std::size_t>(k)][1];
    }
    // Real input: the upper half is the conjugate mirror.
    for (Index k = T / 2 + 1; k < T; ++k) {
      sp.re(k, s) = sp.re(T - k, s);
      sp.im(k, s) = -sp.im(T - k, s);
    }
  }
  return sp;
}

double quantile_linear(std::vector<double> v, double q) {
  if (v.empty()) throw Error("quantile of an empty set");
  if (q < 0 || q > 1) throw Error("quantile level must lie in [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Mat frequency_mask(const Mat& a, const FFTMode& mode) {
  const double tol = kAmplitudeTieTolerance * (a.size() ? a.maxCoeff() : 0.0);
  switch (mode.kind) {
    case FFTModeKind::none: return Mat::Ones(a.rows(), a.cols());
    case FFTModeKind::mean_threshold: {
      const double thr = a.mean();
      return ((a.array() - thr) > tol).cast<double>().matrix();
    }
    case FFTModeKind::quantile80: {
      const double thr = quantile_linear(std::vector<double>(a.data(), a.data() + a.size()), 0.8);
      return ((a.array() - thr) > tol).cast<double>().matrix();
    }
    case FFTModeKind::topk: {
      if (mode.k < 1) throw Error("topk needs k >= 1");
      Mat keep = Mat::Zero(a.rows(), a.cols());
      const Index k = std::min<Index>(mode.k, a.rows());
      for (Index s = 0; s < a.cols(); ++s)
        for (Index r = 0; r < k; ++r) {
          Index best = -1;
          for (Index b = 0; b < a.rows(); ++b) {
            if (keep(b, s) != 0.0) continue;
            if (best < 0 || a(b, s) > a(best, s) + tol) best = b;
          }
          keep(best, s) = 1.0;
        }
      return keep;
    }
  }
  throw Error("unhandled fft mode");
}

FreqFilterResult freq_filter(const Mat& x, const FFTMode& mode, Index f_max) {
  if (!x.allFinite()) throw Error("freq_filter: non-finite input");
  FreqFilterResult r;
  Spectrum sp = dft_time_axis(x);
  r.keep = frequency_mask(sp.amplitude(), mode);
  r.filtered.re = sp.re.cwiseProduct(r.keep);
  r.filtered.im = sp.im.cwiseProduct(r.keep);
  const Index T = x.rows(), S = x.cols(), n = std::min(T, f_max);
  r.features = Mat::Zero(S, 2 * f_max);
  r.features.leftCols(n) = r.filtered.re.topRows(n).transpose();
  r.features.middleCols(f_max, n) = r.filtered.im.topRows(n).transpose();
  return r;
}

}  // namespace urbandit
