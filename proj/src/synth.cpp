#include "driftguard/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Dense>

#include "driftguard/error.hpp"
#include "driftguard/rng.hpp"

namespace driftguard {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> identity(std::size_t d) {
  std::vector<double> out(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) out[i * d + i] = 1.0;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Unit vector orthogonal to `mean` and to the all-ones direction (when d
// leaves room for it).
std::vector<double> novel_direction(std::span<const double> mean) {
  const std::size_t d = mean.size();
  std::vector<std::vector<double>> basis;
  auto orthonormalise = [&](std::vector<double> v) {
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * b[i];
    }
    const double n = std::sqrt(dot(v, v));
    if (n < 1e-9) return std::vector<double>{};
    for (auto& x : v) x /= n;
    return v;
  };
  auto add_basis = [&](std::vector<double> v) {
    auto u = orthonormalise(std::move(v));
    if (!u.empty() && basis.size() + 1 < d) basis.push_back(std::move(u));
  };
  add_basis(std::vector<double>(mean.begin(), mean.end()));
  add_basis(std::vector<double>(d, 1.0));
  // Candidate pattern (+1, +1, -1, -1, ...), then the coordinate axes.
  std::vector<double> pattern(d);
  for (std::size_t i = 0; i < d; ++i) pattern[i] = (i / 2) % 2 == 0 ? 1.0 : -1.0;
  if (auto u = orthonormalise(pattern); !u.empty()) return u;
  for (std::size_t axis = 0; axis < d; ++axis) {
    std::vector<double> e(d, 0.0);
    e[axis] = 1.0;
    if (auto u = orthonormalise(e); !u.empty()) return u;
  }
  std::vector<double> e(d, 0.0);
  e[0] = 1.0;
  return e;
}

struct Sampler {
  std::vector<double> cumulative;
  std::vector<std::vector<double>> means;
  std::vector<RowMatrix> factors;

  std::size_t pick(Rng& rng) const {
    if (cumulative.size() == 1) return 0;
    const double u = rng.uniform();
    for (std::size_t k = 0; k + 1 < cumulative.size(); ++k) {
      if (u < cumulative[k]) return k;
    }
    return cumulative.size() - 1;
  }

  // Draws one point into `out` and returns the generating component.
  std::size_t draw(Rng& rng, std::span<double> out) const {
    const std::size_t k = pick(rng);
    const std::size_t d = out.size();
    std::vector<double> z(d);
    for (auto& v : z) v = rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
      double s = means[k][i];
      for (std::size_t j = 0; j <= i; ++j) s += factors[k](i, j) * z[j];
      out[i] = s;
    }
    return k;
  }
};

Sampler make_sampler(const std::vector<GaussianComponent>& comps, std::size_t d) {
  Sampler s;
  double acc = 0.0;
  for (const auto& c : comps) {
    acc += c.weight;
    s.cumulative.push_back(acc);
    s.means.push_back(c.mean);
    Eigen::Map<const RowMatrix> cov(c.covariance.data(), static_cast<Eigen::Index>(d),
                                    static_cast<Eigen::Index>(d));
    Eigen::LLT<RowMatrix> llt(cov);
    if (llt.info() != Eigen::Success) throw ParameterError("component covariance is not positive definite");
    s.factors.push_back(llt.matrixL());
  }
  return s;
}

FeatureMatrix draw_matrix(const Sampler& s, Rng& rng, std::size_t n, std::size_t d) {
  std::vector<double> data(n * d);
  for (std::size_t r = 0; r < n; ++r) s.draw(rng, std::span<double>(data.data() + r * d, d));
  return FeatureMatrix(n, d, std::move(data));
}

const ExtraMode* find_extra_mode(const ShiftScenario& sc) {
  for (const auto& s : sc.ood) {
    if (const auto* e = std::get_if<ExtraMode>(&s)) return e;
  }
  return nullptr;
}

}  // namespace

void validate(const ShiftScenario& sc) {
  const std::size_t d = sc.d;
  if (d == 0) throw ParameterError("scenario dimension must be positive");
  if (sc.n_monitor == 0 || sc.n_id == 0 || sc.n_ood == 0) {
    throw ParameterError("scenario counts must all be at least 1");
  }
  if (sc.id.empty()) throw ParameterError("scenario needs at least one ID component");
  double total = 0.0;
  for (const auto& c : sc.id) {
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) throw ParameterError("component weights must be positive");
    if (c.mean.size() != d) throw ParameterError("component mean has the wrong dimension");
    if (c.covariance.size() != d * d) throw ParameterError("component covariance has the wrong shape");
    for (double v : c.mean) {
      if (!std::isfinite(v)) throw ParameterError("component mean is not finite");
    }
    Eigen::Map<const RowMatrix> cov(c.covariance.data(), static_cast<Eigen::Index>(d),
                                    static_cast<Eigen::Index>(d));
    if (!cov.allFinite() || !cov.isApprox(cov.transpose(), 1e-12)) {
      throw ParameterError("component covariance must be finite and symmetric");
    }
    if (Eigen::LLT<RowMatrix>(cov).info() != Eigen::Success) {
      throw ParameterError("component covariance is not positive definite");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ParameterError("component weights must sum to 1");
  std::size_t extra_modes = 0;
  for (const auto& s : sc.ood) {
    if (const auto* m = std::get_if<MeanShift>(&s); m && !std::isfinite(m->delta)) {
      throw ParameterError("mean shift must be finite");
    }
    if (const auto* m = std::get_if<ScaleShift>(&s); m && !(m->factor > 0.0 && std::isfinite(m->factor))) {
      throw ParameterError("scale factor must be positive");
    }
    if (const auto* m = std::get_if<ExtraMode>(&s)) {
      if (!(m->weight > 0.0 && m->weight <= 1.0)) throw ParameterError("extra mode weight must lie in (0, 1]");
      if (!(m->distance >= 0.0 && std::isfinite(m->distance))) {
        throw ParameterError("extra mode distance must be finite and non-negative");
      }
      ++extra_modes;
    }
    if (const auto* m = std::get_if<Rotation>(&s)) {
      if (m->angles.size() > d / 2) throw ParameterError("more rotation angles than coordinate planes");
      for (double a : m->angles) {
        if (!std::isfinite(a)) throw ParameterError("rotation angles must be finite");
      }
    }
  }
  if (extra_modes > 1) throw ParameterError("at most one extra mode per scenario");
}

GeneratedData generate(const ShiftScenario& sc) {
  validate(sc);
  const std::size_t d = sc.d;
  Rng rng(sc.seed);
  const Sampler id_sampler = make_sampler(sc.id, d);

  GeneratedData out;
  out.monitor = draw_matrix(id_sampler, rng, sc.n_monitor, d);
  out.id = draw_matrix(id_sampler, rng, sc.n_id, d);

  Sampler ood_sampler = id_sampler;
  if (const auto* extra = find_extra_mode(sc)) {
    const auto& anchor = sc.id.front().mean;
    const auto u = novel_direction(anchor);
    std::vector<double> centre(d);
    for (std::size_t i = 0; i < d; ++i) centre[i] = anchor[i] + extra->distance * u[i];
    ood_sampler = make_sampler({GaussianComponent{1.0, centre, identity(d)}}, d);
  }

  std::vector<double> data(sc.n_ood * d);
  for (std::size_t r = 0; r < sc.n_ood; ++r) {
    std::span<double> x(data.data() + r * d, d);
    const std::size_t k = ood_sampler.draw(rng, x);
    std::vector<double> centre = ood_sampler.means[k];
    for (const auto& shift : sc.ood) {
      if (const auto* m = std::get_if<MeanShift>(&shift)) {
        for (std::size_t i = 0; i < d; ++i) {
          x[i] += m->delta;
          centre[i] += m->delta;
        }
      } else if (const auto* s = std::get_if<ScaleShift>(&shift)) {
        for (std::size_t i = 0; i < d; ++i) x[i] = centre[i] + s->factor * (x[i] - centre[i]);
      } else if (const auto* rot = std::get_if<Rotation>(&shift)) {
        for (std::size_t p = 0; p < rot->angles.size(); ++p) {
          const double c = std::cos(rot->angles[p]);
          const double sn = std::sin(rot->angles[p]);
          const double xa = x[2 * p], xb = x[2 * p + 1];
          x[2 * p] = c * xa - sn * xb;
          x[2 * p + 1] = sn * xa + c * xb;
          const double a = centre[2 * p], b = centre[2 * p + 1];
          centre[2 * p] = c * a - sn * b;
          centre[2 * p + 1] = sn * a + c * b;
        }
      }
    }
  }
  out.ood = FeatureMatrix(sc.n_ood, d, std::move(data));
  out.labels.assign(sc.n_id, SampleLabel::Id);
  out.labels.insert(out.labels.end(), sc.n_ood, SampleLabel::Ood);
  return out;
}

std::vector<GaussianComponent> standard_id_spec(std::size_t d) {
  std::vector<double> mean(d);
  for (std::size_t i = 0; i < d; ++i) mean[i] = i % 2 == 0 ? 4.0 : -4.0;
  return {GaussianComponent{1.0, std::move(mean), identity(d)}};
}

ShiftScenario mean_shift_scenario(double delta, std::uint64_t seed, std::size_t d) {
  ShiftScenario sc;
  sc.name = "mean-shift";
  sc.d = d;
  sc.id = standard_id_spec(d);
  sc.ood = {MeanShift{delta}};
  sc.seed = seed;
  return sc;
}

std::vector<std::string> preset_names() {
  return {"covariate-mild", "covariate-strong", "semantic", "joint"};
}

ShiftScenario preset_scenario(const std::string& name, std::uint64_t seed) {
  ShiftScenario sc;
  sc.name = name;
  sc.d = 16;
  sc.id = standard_id_spec(sc.d);
  sc.seed = seed;
  if (name == "covariate-mild") {
    sc.ood = {MeanShift{1.0}};
  } else if (name == "covariate-strong") {
    sc.ood = {MeanShift{3.0}};
  } else if (name == "semantic") {
    sc.ood = {ExtraMode{0.5, 5.0}};
  } else if (name == "joint") {
    sc.ood = {ExtraMode{0.5, 5.0}, ScaleShift{1.5}};
  } else {
    throw ParameterError("unknown preset '" + name +
                         "' (expected covariate-mild, covariate-strong, semantic or joint)");
  }
  return sc;
}

nlohmann::json to_json(const ShiftScenario& sc) {
  nlohmann::json j;
  j["name"] = sc.name;
  j["d"] = sc.d;
  j["seed"] = sc.seed;
  j["counts"] = {{"monitor", sc.n_monitor}, {"id", sc.n_id}, {"ood", sc.n_ood}};
  auto& comps = j["id"];
  comps = nlohmann::json::array();
  for (const auto& c : sc.id) {
    nlohmann::json cov = nlohmann::json::array();
    for (std::size_t i = 0; i < sc.d; ++i) {
      cov.push_back(std::vector<double>(c.covariance.begin() + static_cast<std::ptrdiff_t>(i * sc.d),
                                        c.covariance.begin() + static_cast<std::ptrdiff_t>((i + 1) * sc.d)));
    }
    comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"covariance", cov}});
  }
  auto& shifts = j["ood"];
  shifts = nlohmann::json::array();
  for (const auto& s : sc.ood) {
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, MeanShift>) {
            shifts.push_back({{"type", "mean_shift"}, {"delta", v.delta}});
          } else if constexpr (std::is_same_v<T, ScaleShift>) {
            shifts.push_back({{"type", "scale_shift"}, {"factor", v.factor}});
          } else if constexpr (std::is_same_v<T, ExtraMode>) {
            shifts.push_back({{"type", "extra_mode"}, {"weight", v.weight}, {"distance", v.distance}});
          } else {
            shifts.push_back({{"type", "rotation"}, {"angles", v.angles}});
          }
        },
        s);
  }
  return j;
}

ShiftScenario scenario_from_json(const nlohmann::json& j) {
  ShiftScenario sc;
  try {
    const std::uint64_t seed = j.value("seed", std::uint64_t{42});
    if (j.contains("preset")) {
      sc = preset_scenario(j.at("preset").get<std::string>(), seed);
    } else {
      sc.name = j.value("name", std::string("custom"));
      sc.d = j.at("d").get<std::size_t>();
      sc.seed = seed;
      if (j.contains("id")) {
        sc.id.clear();
        for (const auto& c : j.at("id")) {
          GaussianComponent g;
          g.weight = c.value("weight", 1.0);
          g.mean = c.at("mean").get<std::vector<double>>();
          if (c.contains("covariance")) {
            for (const auto& row : c.at("covariance")) {
              const auto r = row.get<std::vector<double>>();
              if (r.size() != sc.d) throw ParameterError("covariance rows must have d entries");
              g.covariance.insert(g.covariance.end(), r.begin(), r.end());
            }
          } else {
            g.covariance = identity(sc.d);
          }
          sc.id.push_back(std::move(g));
        }
      } else {
        sc.id = standard_id_spec(sc.d);
      }
      for (const auto& s : j.value("ood", nlohmann::json::array())) {
        const auto type = s.at("type").get<std::string>();
        if (type == "mean_shift") {
          sc.ood.push_back(MeanShift{s.at("delta").get<double>()});
        } else if (type == "scale_shift") {
          sc.ood.push_back(ScaleShift{s.at("factor").get<double>()});
        } else if (type == "extra_mode") {
          sc.ood.push_back(ExtraMode{s.value("weight", 0.5), s.at("distance").get<double>()});
        } else if (type == "rotation") {
          sc.ood.push_back(Rotation{s.at("angles").get<std::vector<double>>()});
        } else {
          throw ParameterError("unknown shift type '" + type + "'");
        }
      }
    }
    if (j.contains("counts")) {
      const auto& c = j.at("counts");
      sc.n_monitor = c.value("monitor", sc.n_monitor);
      sc.n_id = c.value("id", sc.n_id);
      sc.n_ood = c.value("ood", sc.n_ood);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("invalid scenario: ") + e.what());
  }
  validate(sc);
  return sc;
}

ShiftScenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("scenario file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return scenario_from_json(j);
}

double oracle_auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  double wins = 0.0;
  for (double a : id_scores) {
    for (double b : ood_scores) {
      if (a > b) wins += 1.0;
      else if (a == b) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

std::vector<double> oracle_numeric_jacobian(const FlowModel& flow, std::span<const double> x,
                                            double h) {
  const std::size_t d = x.size();
  if (d != flow.dimension) throw ShapeError("point dimension does not match the flow");
  if (d > 8) throw ParameterError("numeric Jacobian oracle is limited to d <= 8");
  if (!(h >= 1e-7 && h <= 1e-4)) throw ParameterError("step must lie in [1e-7, 1e-4]");
  std::vector<double> jac(d * d);
  std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
  for (std::size_t j = 0; j < d; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const auto zp = forward(flow, xp).z;
    const auto zm = forward(flow, xm).z;
    for (std::size_t i = 0; i < d; ++i) jac[i * d + j] = (zp[i] - zm[i]) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return jac;
}

DensityOracle oracle_gmm_density(const GmmModel& model, std::span<const double> x) {
  const std::size_t d = model.dimension;
  if (x.size() != d) throw ShapeError("point dimension does not match the mixture");
  if (d > 16) throw ParameterError("density oracle is limited to d <= 16");
  const auto di = static_cast<Eigen::Index>(d);
  double total = 0.0;
  for (std::size_t k = 0; k < model.components(); ++k) {
    RowMatrix sigma = RowMatrix::Zero(di, di);
    if (model.structure == CovarianceStructure::Full) {
      sigma = Eigen::Map<const RowMatrix>(model.covariances[k].data(), di, di);
    } else {
      for (std::size_t i = 0; i < d; ++i) sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = model.covariances[k][i];
    }
    const RowMatrix inv = sigma.inverse();
    const double det = sigma.determinant();
    Eigen::VectorXd diff(di);
    for (std::size_t i = 0; i < d; ++i) diff(static_cast<Eigen::Index>(i)) = x[i] - model.means[k][i];
    const double quad = diff.dot(inv * diff);
    const double norm = std::pow(2.0 * std::numbers::pi, static_cast<double>(d) / 2.0) * std::sqrt(det);
    total += model.weights[k] * std::exp(-0.5 * quad) / norm;
  }
  return {total, total == 0.0};
}

}  // namespace driftguard
