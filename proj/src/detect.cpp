#include "detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

namespace gk {

int64_t detect_grok(const std::vector<SeriesPoint>& accuracy,
                    const DetectorConfig& cfg) {
  const int need = cfg.n_sustained;
  int run = 0;
  for (size_t i = 0; i < accuracy.size(); ++i) {
    if (accuracy[i].value >= cfg.acc_threshold) {
      if (++run == need) return accuracy[i + 1 - size_t(need)].step;
    } else {
      run = 0;
    }
  }
  return -1;
}

int64_t detect_onset(const std::vector<SeriesPoint>& defect_medians,
                     const DetectorConfig& cfg, const std::string& run_name) {
  const size_t w = static_cast<size_t>(cfg.baseline_window);
  if (defect_medians.size() < w)
    throw std::runtime_error("detect_onset: run '" + run_name + "' has " +
                             std::to_string(defect_medians.size()) +
                             " measurements, need " + std::to_string(w) +
                             " for the baseline");
  std::vector<double> head;
  head.reserve(w);
  for (size_t i = 0; i < w; ++i) head.push_back(defect_medians[i].value);
  std::sort(head.begin(), head.end());
  const double baseline = head[(w - 1) / 2];
  if (!std::isfinite(baseline))
    throw std::runtime_error("detect_onset: run '" + run_name +
                             "' has a non-finite baseline");
  const double thr =
      std::max(cfg.onset_multiplier * baseline, cfg.onset_floor);
  for (const SeriesPoint& p : defect_medians)
    if (p.value > thr) return p.step;
  return -1;
}

LeadTime lead_time(int64_t grok_step, int64_t onset_step) {
  LeadTime out;
  if (grok_step < 0 || onset_step < 0) return out;
  out.delta_t = double(grok_step - onset_step);
  out.fraction = grok_step > 0 ? out.delta_t / double(grok_step) : 0.0;
  out.valid = out.delta_t >= 0;
  return out;
}

namespace {

struct LogFit {
  bool valid = false;
  double slope = 0, intercept = 0, r2 = 0, se_slope = 0;
  int n = 0;
};

LogFit ols_log(const std::vector<ScalingPoint>& pts) {
  LogFit f;
  double sx = 0, sy = 0;
  std::vector<double> xs, ys;
  for (const ScalingPoint& p : pts) {
    xs.push_back(std::log(p.t_grok));
    ys.push_back(std::log(p.delta_t));
    sx += xs.back();
    sy += ys.back();
  }
  const int n = int(xs.size());
  f.n = n;
  if (n < 3) return f;
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx <= 0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0, sst = 0;
  for (int i = 0; i < n; ++i) {
    const double e = ys[i] - (f.intercept + f.slope * xs[i]);
    ssr += e * e;
    sst += (ys[i] - my) * (ys[i] - my);
  }
  f.r2 = sst > 0 ? 1.0 - ssr / sst : 1.0;
  f.se_slope = n > 2 ? std::sqrt(ssr / (n - 2) / sxx) : 0.0;
  f.valid = true;
  return f;
}

}  // namespace

ScalingFit fit_power_law(const std::vector<ScalingPoint>& points,
                         FitMethod method) {
  ScalingFit out;
  std::vector<ScalingPoint> use;
  for (const ScalingPoint& p : points) {
    if (p.t_grok > 0 && p.delta_t > 0)
      use.push_back(p);
    else
      ++out.n_excluded;
  }
  out.n = int(use.size());
  LogFit lf = ols_log(use);
  if (!lf.valid) return out;
  out.c = std::exp(lf.intercept);
  out.alpha = lf.slope;
  out.r2 = lf.r2;
  out.se_alpha = lf.se_slope;
  out.valid = true;

  if (method == FitMethod::nonlinear_ls) {
    double c = out.c, a = out.alpha;
    for (int it = 0; it < 200; ++it) {
      // Normal equations for the Jacobian [t^a, c*t^a*ln t].
      double j11 = 0, j12 = 0, j22 = 0, g1 = 0, g2 = 0;
      for (const ScalingPoint& p : use) {
        const double ta = std::pow(p.t_grok, a);
        const double lt = std::log(p.t_grok);
        const double r = p.delta_t - c * ta;
        j11 += ta * ta;
        j12 += ta * c * ta * lt;
        j22 += c * ta * lt * c * ta * lt;
        g1 += ta * r;
        g2 += c * ta * lt * r;
      }
      const double det = j11 * j22 - j12 * j12;
      if (!(std::fabs(det) > 1e-30)) break;
      const double dc = (j22 * g1 - j12 * g2) / det;
      const double da = (-j12 * g1 + j11 * g2) / det;
      c += dc;
      a += da;
      if (!(std::isfinite(c) && std::isfinite(a)) || c <= 0) {
        out.valid = false;
        return out;
      }
      if (std::fabs(dc) < 1e-12 * std::fabs(c) && std::fabs(da) < 1e-12) break;
    }
    out.c = c;
    out.alpha = a;
    double ssr = 0, sst = 0, my = 0;
    for (const ScalingPoint& p : use) my += p.delta_t;
    my /= out.n;
    for (const ScalingPoint& p : use) {
      const double e = p.delta_t - c * std::pow(p.t_grok, a);
      ssr += e * e;
      sst += (p.delta_t - my) * (p.delta_t - my);
    }
    out.r2 = sst > 0 ? 1.0 - ssr / sst : 1.0;
  }
  return out;
}

ScalingFit lr_mean_fit(const std::vector<RunRow>& rows, FitMethod method,
                       std::vector<double>* dropped_groups) {
  std::map<double, std::pair<double, double>> sums;  // lr -> (sum_g, sum_dt)
  std::map<double, int> counts;
  for (const RunRow& r : rows) {
    counts.emplace(r.lr, 0);
    if (r.grok_step < 0 || r.onset_step < 0) continue;
    const double dt = double(r.grok_step - r.onset_step);
    if (dt <= 0) continue;
    sums[r.lr].first += double(r.grok_step);
    sums[r.lr].second += dt;
    counts[r.lr] += 1;
  }
  std::vector<ScalingPoint> means;
  for (const auto& [lr, cnt] : counts) {
    if (cnt == 0) {
      if (dropped_groups != nullptr) dropped_groups->push_back(lr);
      continue;
    }
    means.push_back({sums[lr].first / cnt, sums[lr].second / cnt});
  }
  ScalingFit fit = fit_power_law(means, method);
  fit.domain = FitDomain::lr_means;
  return fit;
}

std::string run_rows_csv(const std::vector<RunRow>& rows) {
  std::string out = "lr,seed,grok_step,onset_step,lead,lead_fraction,flags\n";
  char buf[128];
  for (const RunRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%g,%llu,", r.lr,
                  (unsigned long long)r.seed);
    out += buf;
    if (r.grok_step >= 0) {
      std::snprintf(buf, sizeof buf, "%lld", (long long)r.grok_step);
      out += buf;
    }
    out += ',';
    if (r.onset_step >= 0) {
      std::snprintf(buf, sizeof buf, "%lld", (long long)r.onset_step);
      out += buf;
    }
    if (r.grok_step >= 0 && r.onset_step >= 0)
      std::snprintf(buf, sizeof buf, ",%g,%g,", r.delta_t, r.lead_fraction);
    else
      std::snprintf(buf, sizeof buf, ",,,");
    out += buf;
    out += r.flags;
    out += '\n';
  }
  return out;
}

}  // namespace gk
