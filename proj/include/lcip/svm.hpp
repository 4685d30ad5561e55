#pragma once

// Two-class RBF support vector machine trained with an SMO dual solver
// (maximal-violating-pair selection with second-order working-set choice).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <list>
#include <span>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "lcip/common.hpp"

namespace lcip {

struct SvmModel {
  std::vector<Point2> support_points;
  std::vector<double> dual_coefficients;  // alpha_i * y_i
  double bias = 0.0;
  double gamma = 0.01;
  double c = 10.0;

  // Training diagnostics.
  std::vector<std::size_t> support_indices;  // positions in the training set
  double objective = 0.0;                    // dual objective sum(a) - 1/2 a'Qa
  double max_kkt_violation = 0.0;
  std::size_t iterations = 0;
};

struct SvmOptions {
  double c = 10.0;
  double gamma = 0.01;
  double tol = 1e-6;
  std::size_t max_iterations = 0;  // 0: max(10'000'000, 100 n)
  std::size_t cache_rows = 0;      // 0: sized to ~256 MB
};

inline double rbf_kernel(const Point2& a, const Point2& b, double gamma) {
  return std::exp(-gamma * distance_sq(a, b));
}

/// f(p) = sum_i alpha_i y_i exp(-gamma |p - p_i|^2) + b
inline double decision_value(const SvmModel& model, const Point2& p) {
  double f = model.bias;
  for (std::size_t i = 0; i < model.support_points.size(); ++i) {
    f += model.dual_coefficients[i] * rbf_kernel(p, model.support_points[i], model.gamma);
  }
  return f;
}

namespace detail {

// LRU cache of kernel rows Q_i. = y_i y_t K(p_i, p_t).
class KernelRowCache {
 public:
  KernelRowCache(std::span<const Point2> pts, std::span<const int> y, double gamma, std::size_t capacity)
      : pts_(pts), y_(y), gamma_(gamma), capacity_(std::max<std::size_t>(capacity, 2)) {}

  const std::vector<double>& row(std::size_t i) {
    auto it = map_.find(i);
    if (it != map_.end()) {
      order_.splice(order_.begin(), order_, it->second.second);
      return it->second.first;
    }
    if (map_.size() >= capacity_) {
      const std::size_t victim = order_.back();
      order_.pop_back();
      map_.erase(victim);
    }
    std::vector<double> r(pts_.size());
    const double yi = y_[i];
    for (std::size_t t = 0; t < pts_.size(); ++t) {
      r[t] = yi * y_[t] * rbf_kernel(pts_[i], pts_[t], gamma_);
    }
    order_.push_front(i);
    auto [ins, ok] = map_.emplace(i, std::make_pair(std::move(r), order_.begin()));
    return ins->second.first;
  }

 private:
  std::span<const Point2> pts_;
  std::span<const int> y_;
  double gamma_;
  std::size_t capacity_;
  std::list<std::size_t> order_;
  std::unordered_map<std::size_t, std::pair<std::vector<double>, std::list<std::size_t>::iterator>> map_;
};

}  // namespace detail

/// Solves min 1/2 a'Qa - e'a  s.t. 0 <= a <= c, y'a = 0 until the maximal
/// KKT violation drops below tol.
inline SvmModel fit_rbf_svm(std::span<const Point2> points, std::span<const int> labels, const SvmOptions& opt) {
  const std::size_t n = points.size();
  if (labels.size() != n) throw Error(ErrorCode::DegenerateInput, "points/labels size mismatch");
  if (!(opt.c > 0.0) || !(opt.gamma > 0.0) || !(opt.tol > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "svm c, gamma and tol must be positive");
  }
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y == 1) ++n_pos;
    else if (y == -1) ++n_neg;
    else throw Error(ErrorCode::DegenerateInput, "labels must be +1/-1");
  }
  if (n_pos < 2 || n_neg < 2) {
    throw Error(ErrorCode::DegenerateInput, "need >= 2 points per class, got " + std::to_string(n_pos) + "/" +
                                                std::to_string(n_neg));
  }

  const double C = opt.c;
  const std::size_t max_iter = opt.max_iterations ? opt.max_iterations : std::max<std::size_t>(10'000'000, 100 * n);
  const std::size_t cache_rows =
      opt.cache_rows ? opt.cache_rows : std::max<std::size_t>(2, (std::size_t{256} << 20) / (sizeof(double) * n));
  detail::KernelRowCache cache(points, labels, opt.gamma, cache_rows);

  std::vector<double> alpha(n, 0.0);
  std::vector<double> grad(n, -1.0);  // G = Q a - e
  const std::vector<double> qd(n, 1.0);  // RBF: K(p, p) = 1
  constexpr double kTau = 1e-12;

  auto is_upper = [&](std::size_t t) { return alpha[t] >= C; };
  auto is_lower = [&](std::size_t t) { return alpha[t] <= 0.0; };
  auto in_up = [&](std::size_t t) { return labels[t] == 1 ? !is_upper(t) : !is_lower(t); };
  auto in_low = [&](std::size_t t) { return labels[t] == 1 ? !is_lower(t) : !is_upper(t); };

  std::size_t iter = 0;
  double violation = 0.0;
  for (;; ++iter) {
    // i: maximal -y G over I_up.
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t)) {
        const double v = -labels[t] * grad[t];
        if (v > gmax) {
          gmax = v;
          i = t;
        }
      }
    }
    double gmin = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (in_low(t)) gmin = std::min(gmin, -labels[t] * grad[t]);
    }
    violation = gmax - gmin;
    if (i == n || violation < opt.tol) break;
    if (iter >= max_iter) throw Error(ErrorCode::NotConverged, std::to_string(max_iter));

    // j: second-order gain among I_low with -y G below gmax.
    const std::vector<double>& qi = cache.row(i);
    std::size_t j = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double b = gmax + labels[t] * grad[t];
      if (b <= 0.0) continue;
      // a = K_ii + K_tt - 2 K_it ; Q_it = y_i y_t K_it
      double a = qd[i] + qd[t] - 2.0 * labels[i] * labels[t] * qi[t];
      if (a <= 0.0) a = kTau;
      const double gain = -(b * b) / a;
      if (gain < best) {
        best = gain;
        j = t;
      }
    }
    if (j == n) break;
    const std::vector<double> qi_copy = qi;  // row(j) may evict row(i)
    const std::vector<double>& qj = cache.row(j);

    const double old_ai = alpha[i];
    const double old_aj = alpha[j];
    if (labels[i] != labels[j]) {
      double quad = qd[i] + qd[j] + 2.0 * qi_copy[j];
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
      if (diff > 0.0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = qd[i] + qd[j] - 2.0 * qi_copy[j];
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
      } else if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = sum;
      }
    }
    const double dai = alpha[i] - old_ai;
    const double daj = alpha[j] - old_aj;
    for (std::size_t t = 0; t < n; ++t) grad[t] += qi_copy[t] * dai + qj[t] * daj;
  }

  // Bias from free vectors, midpoint of the feasible interval otherwise.
  double sum_free = 0.0;
  std::size_t n_free = 0;
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = labels[t] * grad[t];
    if (is_upper(t)) {
      if (labels[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (is_lower(t)) {
      if (labels[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  SvmModel model;
  model.bias = -rho;
  model.gamma = opt.gamma;
  model.c = C;
  model.iterations = iter;
  model.max_kkt_violation = violation;
  double obj = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    obj += alpha[t] * (grad[t] - 1.0);
    if (alpha[t] > 0.0) {
      model.support_points.push_back(points[t]);
      model.dual_coefficients.push_back(alpha[t] * labels[t]);
      model.support_indices.push_back(t);
    }
  }
  model.objective = -0.5 * obj;
  return model;
}

inline SvmModel fit_rbf_svm(std::span<const Point2> points, std::span<const int> labels, double c, double gamma,
                            double tol = 1e-6) {
  SvmOptions opt;
  opt.c = c;
  opt.gamma = gamma;
  opt.tol = tol;
  return fit_rbf_svm(points, labels, opt);
}

inline nlohmann::json svm_to_json(const SvmModel& m) {
  nlohmann::json j;
  j["gamma"] = m.gamma;
  j["c"] = m.c;
  j["bias"] = m.bias;
  j["objective"] = m.objective;
  j["max_kkt_violation"] = m.max_kkt_violation;
  j["iterations"] = m.iterations;
  nlohmann::json sv = nlohmann::json::array();
  for (std::size_t i = 0; i < m.support_points.size(); ++i) {
    sv.push_back({m.support_points[i].x, m.support_points[i].y, m.dual_coefficients[i]});
  }
  j["support_vectors"] = sv;
  return j;
}

inline SvmModel svm_from_json(const nlohmann::json& j) {
  SvmModel m;
  m.gamma = j.at("gamma").get<double>();
  m.c = j.at("c").get<double>();
  m.bias = j.at("bias").get<double>();
  m.objective = j.value("objective", 0.0);
  m.max_kkt_violation = j.value("max_kkt_violation", 0.0);
  m.iterations = j.value("iterations", std::size_t{0});
  for (const auto& sv : j.at("support_vectors")) {
    m.support_points.push_back({sv.at(0).get<double>(), sv.at(1).get<double>()});
    m.dual_coefficients.push_back(sv.at(2).get<double>());
  }
  return m;
}

}  // namespace lcip
