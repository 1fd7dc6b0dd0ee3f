#include "avf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "avf/error.hpp"

namespace avf::metrics {

namespace {

struct Moments {
  double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
};

Moments moments(std::span<const double> x, std::span<const double> y, const char* who) {
  if (x.size() != y.size()) throw NumericalError(std::string(who) + ": length mismatch");
  if (x.size() < 2) throw NumericalError(std::string(who) + ": need at least 2 samples");
  const double n = static_cast<double>(x.size());
  Moments m;
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.mx += x[i];
    m.my += y[i];
  }
  m.mx /= n;
  m.my /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - m.mx, dy = y[i] - m.my;
    m.sxx += dx * dx;
    m.syy += dy * dy;
    m.sxy += dx * dy;
  }
  m.sxx /= n;
  m.syy /= n;
  m.sxy /= n;
  return m;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  const Moments m = moments(x, y, "pearson");
  if (m.sxx == 0.0 || m.syy == 0.0) throw NumericalError("pearson: undefined for a constant input");
  return m.sxy / std::sqrt(m.sxx * m.syy);
}

double ccc(std::span<const double> x, std::span<const double> y) {
  const Moments m = moments(x, y, "ccc");
  const double gap = m.mx - m.my;
  const double den = m.sxx + m.syy + gap * gap;
  if (den == 0.0) throw NumericalError("ccc: undefined for identical constant inputs");
  return 2.0 * m.sxy / den;
}

ErrorMetrics error_metrics(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw NumericalError("error_metrics: length mismatch");
  ErrorMetrics e;
  if (x.empty()) return e;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    e.mse += d * d;
    e.mae += std::abs(d);
  }
  e.mse /= static_cast<double>(x.size());
  e.mae /= static_cast<double>(x.size());
  return e;
}

TargetMetrics evaluate_target(std::span<const double> pred, std::span<const double> truth) {
  TargetMetrics t;
  t.ccc = ccc(pred, truth);
  try {
    t.pcc = pearson(pred, truth);
  } catch (const NumericalError&) {
    t.pcc.reset();
  }
  const auto e = error_metrics(pred, truth);
  t.mse = e.mse;
  t.mae = e.mae;
  return t;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j{{"n", r.n}};
  for (const auto& [name, t] : r.targets) {
    j[name] = {{"ccc", t.ccc}, {"pcc", t.pcc ? nlohmann::json(*t.pcc) : nlohmann::json(nullptr)},
               {"mse", t.mse}, {"mae", t.mae}};
  }
  return j;
}

PccMatrix pcc_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& predictions) {
  const std::size_t k = predictions.size();
  PccMatrix out;
  out.M = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k),
                                    std::numeric_limits<double>::quiet_NaN());
  out.defined.assign(k, std::vector<bool>(k, false));
  for (const auto& [name, v] : predictions) {
    out.labels.push_back(name);
    if (v.size() != predictions.front().second.size()) {
      throw NumericalError("pcc_matrix: prediction vectors differ in length");
    }
    if (v.size() < 2) throw NumericalError("pcc_matrix: need at least 2 predictions per model");
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      try {
        const double r = pearson(predictions[i].second, predictions[j].second);
        const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
        out.M(a, b) = out.M(b, a) = r;
        out.defined[i][j] = out.defined[j][i] = true;
      } catch (const NumericalError&) {
      }
    }
  }
  return out;
}

std::string to_csv(const PccMatrix& m) {
  std::ostringstream os;
  os << std::setprecision(17) << "model";
  for (const auto& l : m.labels) os << ',' << l;
  os << '\n';
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    os << m.labels[i];
    for (std::size_t j = 0; j < m.labels.size(); ++j) {
      os << ',';
      if (m.defined[i][j]) os << m.M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      else os << "nan";
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json to_json(const PccMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.labels.size(); ++j) {
      if (m.defined[i][j]) row.push_back(m.M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      else row.push_back(nullptr);
    }
    rows.push_back(row);
  }
  return {{"labels", m.labels}, {"matrix", rows}};
}

std::string format_table(const std::string& title, const std::string& label_header,
                         const std::vector<ResultRow>& rows, bool with_mean) {
  std::size_t w = label_header.size();
  for (const auto& r : rows) w = std::max(w, r.name.size());
  const int lw = static_cast<int>(w);
  std::ostringstream os;
  os << title << '\n';
  os << std::left << std::setw(lw) << label_header << std::right << "  " << std::setw(8) << "Arousal"
     << "  " << std::setw(8) << "Valence";
  if (with_mean) os << "  " << std::setw(8) << "Mean";
  os << '\n' << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    os << std::left << std::setw(lw) << r.name << std::right << "  " << std::setw(8) << r.arousal << "  "
       << std::setw(8) << r.valence;
    if (with_mean) os << "  " << std::setw(8) << r.mean();
    os << '\n';
  }
  return os.str();
}

nlohmann::json table_json(const std::string& title, const std::string& label_header,
                          const std::vector<ResultRow>& rows, bool with_mean) {
  nlohmann::json columns = {label_header, "arousal", "valence"};
  if (with_mean) columns.push_back("mean");
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row = {{"name", r.name}, {"arousal", r.arousal}, {"valence", r.valence}};
    if (with_mean) row["mean"] = r.mean();
    out.push_back(row);
  }
  return {{"title", title}, {"columns", columns}, {"rows", out}};
}

}  // namespace avf::metrics
