#pragma once

// Feature-based DeepHalo.
//
//   z_j^0 = χ(x_j)
//   Z̄^l   = mean_{k∈S} W^l σ(z_k^{l-1})                       (H-vector)
//   z_j^l = z_j^{l-1} + (1/H) Σ_h Z̄_h^l φ_h^l(z_j^0)
//   u_j   = βᵀ z_j^L
//
// The ResNet variant replaces the head sum with z_j^l = z_j^{l-1} + Z̄^l where
// W^l is d x d. Dummy columns are reset to zero after the embedding and after
// every layer.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deephalo/choice_model.hpp"
#include "deephalo/featureless.hpp"

namespace deephalo {

enum class FeaturedVariant { kHeads, kResNet };
/// kSum drops the 1/|S| factor of the context summary.
enum class Aggregation { kMean, kSum };
/// kIdentity uses the raw feature column as z^0 (needs d == d_x).
enum class Embedding { kMlp, kIdentity };
/// kDiagonal uses φ_h(z) = q_h ⊙ z instead of the two-layer perceptron.
enum class HeadKind { kMlp, kDiagonal };

struct FeaturedConfig {
  int input_dim = 0;
  int dim = 16;
  int heads = 1;
  int depth = 1;
  /// kLinear is the identity.
  Activation sigma = Activation::kLinear;
  FeaturedVariant variant = FeaturedVariant::kHeads;
  Aggregation aggregation = Aggregation::kMean;
  Embedding embedding = Embedding::kMlp;
  HeadKind head = HeadKind::kMlp;
};

const char* variant_name(FeaturedVariant v);
FeaturedVariant parse_variant(const std::string& s);
const char* aggregation_name(Aggregation a);
Aggregation parse_aggregation(const std::string& s);
const char* embedding_name(Embedding e);
Embedding parse_embedding(const std::string& s);
const char* head_name(HeadKind h);
HeadKind parse_head(const std::string& s);

class FeaturedDeepHalo final : public ChoiceModel {
 public:
  FeaturedDeepHalo(FeaturedConfig config, std::uint64_t seed);
  FeaturedDeepHalo(const FeaturedDeepHalo& other);
  FeaturedDeepHalo& operator=(const FeaturedDeepHalo&) = delete;

  std::string kind() const override { return "featured"; }
  int universe_size() const override { return 0; }
  int feature_dim() const override { return config_.input_dim; }
  std::vector<ad::Parameter*> parameters() override;
  std::unique_ptr<ChoiceModel> clone() const override;
  ad::Var utilities(ad::Tape& tape, const Batch& batch) override;

  /// Base embeddings z^0 (d x size*width), dummy columns zero.
  ad::Var embed(ad::Tape& tape, const Batch& batch);

  const FeaturedConfig& config() const { return config_; }
  /// Named parameter access; throws ModelError for unknown names.
  ad::Parameter& parameter(const std::string& name);
  bool has_parameter(const std::string& name) const;
  std::vector<std::string> parameter_names() const;

 private:
  void add(const std::string& name, Matrix value);
  ad::Var var(ad::Tape& tape, const std::string& name);
  ad::Var head(ad::Tape& tape, int layer, int h, ad::Var z0);

  FeaturedConfig config_;
  std::vector<ad::Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace deephalo
