#include "duc/steering.hpp"

#include "duc/error.hpp"

namespace duc {

std::string to_string(SteeringMode m) { return m == SteeringMode::Activate ? "activate" : "deactivate"; }

std::string to_string(SteeringPositions p) { return p == SteeringPositions::All ? "all" : "generated"; }

SteeringPositions steering_positions_from_string(const std::string& s) {
  if (s == "all") return SteeringPositions::All;
  if (s == "generated") return SteeringPositions::GeneratedOnly;
  throw ParameterError("unknown steering positions '" + s + "' (expected all or generated)");
}

namespace {

void check_spec(const SaeParams<float>& sae, const SteeringSpec& s) {
  if (s.feature_idx < 0 || s.feature_idx >= sae.features())
    throw ParameterError("feature index " + std::to_string(s.feature_idx) + " out of range for an SAE with " +
                         std::to_string(sae.features()) + " features");
  if (s.layer != sae.layer)
    throw ParameterError("steering layer " + std::to_string(s.layer) + " does not match the SAE layer " +
                         std::to_string(sae.layer));
  if (s.mode == SteeringMode::Activate && s.lambda < 0) throw ParameterError("activation lambda must be nonnegative");
}

}  // namespace

void apply_steering(const SaeParams<float>& sae, const std::vector<SteeringSpec>& specs, Eigen::Ref<RowMatrixf> rows,
                    int first_position, int prompt_length) {
  if (rows.cols() != sae.width())
    throw DimensionError("residual width " + std::to_string(rows.cols()) + " does not match SAE width " +
                         std::to_string(sae.width()));
  for (const auto& s : specs) check_spec(sae, s);
  const float floor = static_cast<float>(kDeactivationFloor);

  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const bool generated = first_position + r >= prompt_length;
    // Activations are read from the row before any edit.
    std::vector<float> f(specs.size(), 0.0f);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& s = specs[i];
      if (s.mode != SteeringMode::Deactivate) continue;
      if (s.positions == SteeringPositions::GeneratedOnly && !generated) continue;
      f[i] = std::max(0.0f, rows.row(r).dot(sae.w_enc.row(s.feature_idx)) + sae.b_enc(0, s.feature_idx));
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& s = specs[i];
      if (s.positions == SteeringPositions::GeneratedOnly && !generated) continue;
      if (s.mode == SteeringMode::Activate) {
        const RowVector<float> delta = static_cast<float>(s.lambda) * sae.w_dec.row(s.feature_idx);
        rows.row(r) += delta;
      } else if (f[i] > floor) {
        rows.row(r) += (floor - f[i]) * sae.w_dec.row(s.feature_idx);
      }
    }
  }
}

RowMatrixf apply_steering(const SaeParams<float>& sae, const SteeringSpec& spec, const RowMatrixf& x) {
  RowMatrixf out = x;
  apply_steering(sae, {spec}, out, 0, 0);
  return out;
}

HookSet<float> steering_hooks(const SaeParams<float>& sae, const std::vector<SteeringSpec>& specs, int prompt_length) {
  for (const auto& s : specs) check_spec(sae, s);
  if (specs.empty()) return {};
  Hook<float> h;
  h.layer = sae.layer;
  h.fn = [&sae, specs, prompt_length](Eigen::Ref<RowMatrixf> rows, int first) {
    apply_steering(sae, specs, rows, first, prompt_length);
  };
  return {h};
}

}  // namespace duc
