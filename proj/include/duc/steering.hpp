#pragma once

#include "duc/sae.hpp"

#include <string>
#include <vector>

namespace duc {

enum class SteeringMode { Activate, Deactivate };
enum class SteeringPositions { All, GeneratedOnly };

std::string to_string(SteeringMode m);
std::string to_string(SteeringPositions p);
SteeringPositions steering_positions_from_string(const std::string& s);

// Activation floor used by Deactivate.
inline constexpr double kDeactivationFloor = 0.01;

struct SteeringSpec {
  int layer = 0;
  int feature_idx = 0;
  double lambda = 0;  // Activate only
  SteeringMode mode = SteeringMode::Activate;
  SteeringPositions positions = SteeringPositions::All;
};

// Edits rows in place. Row r sits at absolute position first_position + r;
// GeneratedOnly selects positions >= prompt_length.
// Activate: x += lambda * W_dec[idx]. Deactivate: where f_idx(x) > floor,
// x += (floor - f_idx(x)) * W_dec[idx]. Several specs on one SAE read the
// feature activations of the unedited row and their edits are summed.
void apply_steering(const SaeParams<float>& sae, const std::vector<SteeringSpec>& specs,
                    Eigen::Ref<RowMatrixf> rows, int first_position = 0, int prompt_length = 0);

RowMatrixf apply_steering(const SaeParams<float>& sae, const SteeringSpec& spec, const RowMatrixf& x);

// One residual hook at the SAE's layer. The SAE must outlive the hooks.
HookSet<float> steering_hooks(const SaeParams<float>& sae, const std::vector<SteeringSpec>& specs, int prompt_length = 0);

}  // namespace duc
