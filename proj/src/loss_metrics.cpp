#include "nconv/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace nconv {

double huber(double z, double t, double delta) {
  const double d = std::abs(z - t);
  return d < delta ? 0.5 * d * d : delta * d - 0.5 * delta * delta;
}

double huber_grad(double z, double t, double delta) {
  const double d = z - t;
  if (std::abs(d) < delta) return d;
  return d > 0.0 ? delta : -delta;
}

std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::HuberConf:
      return "conf";
    case LossMode::HuberOnly:
      return "huber";
    case LossMode::L2Conf:
      return "l2conf";
  }
  return "?";
}

LossMode parse_loss_mode(std::string_view name) {
  if (name == "conf") return LossMode::HuberConf;
  if (name == "huber") return LossMode::HuberOnly;
  if (name == "l2conf") return LossMode::L2Conf;
  throw FormatError("unknown loss mode '" + std::string(name) + "' (expected conf, huber or l2conf)");
}

LossResult confidence_loss(const Tensor& Z, const Tensor& C, const Tensor& T, const Tensor& valid_mask, int epoch,
                           LossMode mode, double delta) {
  if (epoch < 1) throw RangeError("confidence_loss: epoch must be >= 1, got " + std::to_string(epoch));
  require_same_shape(Z, C, "confidence_loss");
  require_same_shape(Z, T, "confidence_loss");
  require_same_shape(Z, valid_mask, "confidence_loss");

  LossResult res{{}, Tensor(Z.shape()), Tensor(Z.shape())};
  res.report.epoch = epoch;
  std::size_t n = 0;
  for (double m : valid_mask.data()) n += m > 0.0;
  res.report.pixels = n;
  if (n == 0) return res;

  const bool with_conf = mode != LossMode::HuberOnly;
  const double inv_p = 1.0 / static_cast<double>(epoch);
  const double inv_n = 1.0 / static_cast<double>(n);
  double data = 0.0, conf = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    if (!(valid_mask[i] > 0.0)) continue;
    double e, de;
    if (mode == LossMode::L2Conf) {
      const double d = Z[i] - T[i];
      e = d * d;
      de = 2.0 * d;
    } else {
      e = huber(Z[i], T[i], delta);
      de = huber_grad(Z[i], T[i], delta);
    }
    data += e;
    if (with_conf) {
      conf += inv_p * (C[i] - e * C[i]);
      res.grad_z[i] = (1.0 + C[i] * inv_p) * de * inv_n;
      res.grad_c[i] = -(1.0 - e) * inv_p * inv_n;
    } else {
      res.grad_z[i] = de * inv_n;
    }
  }
  res.report.data_term = data * inv_n;
  res.report.conf_term = conf * inv_n;
  res.report.total = res.report.data_term - res.report.conf_term;
  return res;
}

std::string MetricsReport::csv() const {
  std::ostringstream os;
  os << std::setprecision(10) << mae << ',' << rmse << ',' << imae << ',' << irmse << ',' << n;
  return os.str();
}

MetricsReport depth_metrics(const Tensor& Z, const Tensor& T, const Tensor& valid_mask, double meters_per_unit) {
  require_same_shape(Z, T, "depth_metrics");
  require_same_shape(Z, valid_mask, "depth_metrics");
  if (!(meters_per_unit > 0.0)) throw RangeError("depth_metrics: unit scale must be positive");
  MetricsReport r;
  double abs_sum = 0.0, sq_sum = 0.0, iabs_sum = 0.0, isq_sum = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    if (!(valid_mask[i] > 0.0)) continue;
    if (!(T[i] > 0.0)) {
      throw RangeError("depth_metrics: ground truth depth " + std::to_string(T[i]) + " at index " +
                       std::to_string(i) + " is not positive");
    }
    const double d = Z[i] - T[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
    const double z_km = std::max(Z[i] * meters_per_unit, 1e-3) / 1000.0;
    const double t_km = T[i] * meters_per_unit / 1000.0;
    const double id = 1.0 / z_km - 1.0 / t_km;
    iabs_sum += std::abs(id);
    isq_sum += id * id;
    ++r.n;
  }
  if (r.n == 0) throw RangeError("depth_metrics: no valid pixels");
  const double inv = 1.0 / static_cast<double>(r.n);
  r.mae = abs_sum * inv;
  r.rmse = std::sqrt(sq_sum * inv);
  r.imae = iabs_sum * inv;
  r.irmse = std::sqrt(isq_sum * inv);
  return r;
}

std::vector<double> equalize(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  if (n > 1)
    for (double& r : ranks) r /= static_cast<double>(n - 1);
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: series lengths differ");
  if (x.size() < 2) throw ZeroVariance("pearson: need at least two samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ZeroVariance("pearson: a series has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double conf_error_pearson(std::span<const double> errors, std::span<const double> confidences) {
  if (errors.size() != confidences.size()) throw ShapeError("conf_error_pearson: series lengths differ");
  std::vector<double> abs_err(errors.size()), neg_log(confidences.size());
  for (std::size_t i = 0; i < errors.size(); ++i) {
    abs_err[i] = std::abs(errors[i]);
    neg_log[i] = -std::log(std::max(confidences[i], std::numeric_limits<double>::min()));
  }
  const auto distinct = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return std::unique(v.begin(), v.end()) - v.begin();
  };
  if (distinct(abs_err) < 2) throw ZeroVariance("conf_error_pearson: errors are constant");
  if (distinct(neg_log) < 2) throw ZeroVariance("conf_error_pearson: confidences are constant");
  return pearson(equalize(abs_err), equalize(neg_log));
}

}  // namespace nconv
