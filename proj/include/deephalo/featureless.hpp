#pragma once

// Featureless DeepHalo: utilities from the set indicator e_S alone.
//
//   y^0 = lift(e_S)                       (e_S in the first J of J' coordinates)
//   y^1 = y^0 + Θ^1 e_S                   (residual optional)
//   y^l = y^{l-1} + Θ^l (y^{l-1} ⊙ m_S)    linear, m_S = e_S on the first J rows, 1 after
//   y^l = y^{l-1} + Θ^l σ(y^{l-1})         quadratic, σ(x) = x²
//   u   = W_out y^L, read at the items of S
//
// MNL and CMNL are presets of this class.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deephalo/choice_model.hpp"

namespace deephalo {

enum class Activation { kLinear, kQuadratic };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& s);

struct FeaturelessConfig {
  int universe = 0;
  /// J'; 0 means J.
  int width = 0;
  int depth = 1;
  Activation activation = Activation::kLinear;
  /// Rank H of the factorization Θ = AᵀB; nullopt for dense Θ.
  std::optional<int> rank;
  bool first_layer_residual = true;
  /// Restrict Θ^1 to its diagonal (MNL preset).
  bool diagonal_only = false;
  bool output_trainable = true;
  /// Label stored in serialized files and manifests.
  std::string preset = "deephalo-fl";
};

class FeaturelessDeepHalo final : public ChoiceModel {
 public:
  FeaturelessDeepHalo(FeaturelessConfig config, std::uint64_t seed);

  /// Context-free logit: Θ^1 diagonal, W_out frozen at the identity.
  static FeaturelessDeepHalo mnl(int universe, std::uint64_t seed);
  /// First-order context model: one dense linear layer of width J.
  static FeaturelessDeepHalo cmnl(int universe, std::uint64_t seed);

  std::string kind() const override { return "featureless"; }
  int universe_size() const override { return config_.universe; }
  int feature_dim() const override { return 0; }
  std::vector<ad::Parameter*> parameters() override;
  std::unique_ptr<ChoiceModel> clone() const override;
  ad::Var utilities(ad::Tape& tape, const Batch& batch) override;

  const FeaturelessConfig& config() const { return config_; }
  int width() const { return config_.width; }
  int max_interaction_order() const;

  /// Effective Θ^l (1-based layer), after factorization and diagonal restriction.
  Matrix theta(int layer) const;
  /// Dense layers only.
  void set_theta(int layer, const Matrix& value);
  void set_factors(int layer, const Matrix& a, const Matrix& b);
  const Matrix& output() const { return output_.value; }
  void set_output(const Matrix& value);

  /// Direct access for serialization: dense Θ^l, or A then B per layer.
  std::vector<ad::Parameter>& layer_parameters() { return layers_; }
  ad::Parameter& output_parameter() { return output_; }

 private:
  ad::Var theta_var(ad::Tape& tape, int layer);
  std::size_t in_dim(int layer) const;

  FeaturelessConfig config_;
  std::vector<ad::Parameter> layers_;
  ad::Parameter output_;
  Matrix diagonal_mask_;
};

/// ⌈1 + log2(J − 1)⌉ quadratic layers cover every interaction order of a
/// J-item set. Throws ModelError for J < 2.
int required_depth_quadratic(int universe);

/// Linear: L. Quadratic: 2^(L−1).
int max_interaction_order(Activation activation, int depth);

}  // namespace deephalo
