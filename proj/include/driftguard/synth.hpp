#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "driftguard/features.hpp"
#include "driftguard/flow.hpp"
#include "driftguard/gmm.hpp"

namespace driftguard {

struct GaussianComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> covariance;  // d x d row-major, symmetric positive definite
};

// Adds delta to every coordinate.
struct MeanShift {
  double delta = 0.0;
};

// Scales deviations from the generating component's mean.
struct ScaleShift {
  double factor = 1.0;
};

// OOD samples come from a novel unit-covariance component placed `distance`
// away from the first ID mean, orthogonal to that mean and to the all-ones
// direction. `weight` is the novel component's share of a mixed deployment
// stream and is carried as metadata only.
struct ExtraMode {
  double weight = 0.5;
  double distance = 5.0;
};

// Rotates coordinate planes (0,1), (2,3), ... by the listed angles (radians).
struct Rotation {
  std::vector<double> angles;
};

using Shift = std::variant<MeanShift, ScaleShift, ExtraMode, Rotation>;

struct ShiftScenario {
  std::string name = "custom";
  std::size_t d = 16;
  std::vector<GaussianComponent> id;
  std::vector<Shift> ood;  // applied in order
  std::size_t n_monitor = 2000;
  std::size_t n_id = 500;
  std::size_t n_ood = 500;
  std::uint64_t seed = 42;
};

// Throws ParameterError describing the first problem found.
void validate(const ShiftScenario& scenario);

struct GeneratedData {
  FeatureMatrix monitor;
  FeatureMatrix id;
  FeatureMatrix ood;
  std::vector<SampleLabel> labels;  // n_id Id labels followed by n_ood Ood labels
};

GeneratedData generate(const ShiftScenario& scenario);

// Unit-covariance Gaussian centred at 4 * (+1, -1, +1, ...).
std::vector<GaussianComponent> standard_id_spec(std::size_t d);

ShiftScenario mean_shift_scenario(double delta, std::uint64_t seed = 42, std::size_t d = 16);

std::vector<std::string> preset_names();
ShiftScenario preset_scenario(const std::string& name, std::uint64_t seed = 42);

nlohmann::json to_json(const ShiftScenario& scenario);
// Accepts either a full description or {"preset": name} with optional overrides
// of seed and counts.
ShiftScenario scenario_from_json(const nlohmann::json& j);
ShiftScenario load_scenario(const std::filesystem::path& path);

// P(id > ood) + P(tie) / 2 by counting all pairs.
double oracle_auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// Central-difference Jacobian dz_i/dx_j of the inference-mode forward map,
// d x d row-major. Requires d <= 8 and h in [1e-7, 1e-4].
std::vector<double> oracle_numeric_jacobian(const FlowModel& flow, std::span<const double> x,
                                            double h);

struct DensityOracle {
  double density = 0.0;
  bool underflow = false;  // true when the direct formula rounds to zero
};

// Direct mixture density with explicit covariance inverses and determinants.
DensityOracle oracle_gmm_density(const GmmModel& model, std::span<const double> x);

}  // namespace driftguard
