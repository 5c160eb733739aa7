#include "deephalo/serialization.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "deephalo/errors.hpp"
#include "deephalo/featured.hpp"
#include "deephalo/featureless.hpp"

namespace deephalo {

using nlohmann::json;

namespace {

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Matrix matrix_from(const json& j, const std::string& name, const Matrix& like) {
  if (!j.is_array() || j.size() != like.rows()) {
    throw ModelError("weight '" + name + "' must have " + std::to_string(like.rows()) + " rows");
  }
  Matrix m(like.rows(), like.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const json& r = j[i];
    if (!r.is_array() || r.size() != m.cols()) {
      throw ModelError("weight '" + name + "' row " + std::to_string(i) + " must have " +
                       std::to_string(m.cols()) + " entries");
    }
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!r[c].is_number()) throw ModelError("weight '" + name + "' has a non-numeric entry");
      m(i, c) = r[c].get<double>();
    }
  }
  return m;
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw ModelError(std::string("model file lacks field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ModelError(std::string("model field '") + key + "' has the wrong type: " + e.what());
  }
}

json featureless_json(FeaturelessDeepHalo& m) {
  const auto& c = m.config();
  json j;
  j["format_version"] = kModelFormatVersion;
  j["kind"] = "featureless";
  j["preset"] = c.preset;
  j["J"] = c.universe;
  j["J_prime"] = c.width;
  j["L"] = c.depth;
  j["activation"] = activation_name(c.activation);
  j["rank_H"] = c.rank ? json(*c.rank) : json(nullptr);
  j["first_layer_residual"] = c.first_layer_residual;
  j["diagonal_only"] = c.diagonal_only;
  j["output_trainable"] = c.output_trainable;
  json mats = json::object();
  for (auto* p : m.parameters()) mats[p->name] = matrix_json(p->value);
  j["matrices"] = std::move(mats);
  return j;
}

json featured_json(FeaturedDeepHalo& m) {
  const auto& c = m.config();
  json j;
  j["format_version"] = kModelFormatVersion;
  j["kind"] = "featured";
  j["d_x"] = c.input_dim;
  j["d"] = c.dim;
  j["H"] = c.heads;
  j["L"] = c.depth;
  j["sigma"] = c.sigma == Activation::kQuadratic ? "quadratic" : "identity";
  j["variant"] = variant_name(c.variant);
  j["aggregation"] = aggregation_name(c.aggregation);
  j["embedding"] = embedding_name(c.embedding);
  j["head"] = head_name(c.head);
  json w = json::object();
  for (auto* p : m.parameters()) w[p->name] = matrix_json(p->value);
  j["weights"] = std::move(w);
  return j;
}

void load_weights(ChoiceModel& m, const json& weights) {
  if (!weights.is_object()) throw ModelError("model weights must be a JSON object");
  for (auto* p : m.parameters()) {
    if (!weights.contains(p->name)) throw ModelError("model file lacks weight '" + p->name + "'");
    p->value = matrix_from(weights.at(p->name), p->name, p->value);
  }
  if (weights.size() != m.parameters().size()) {
    throw ModelError("model file has unexpected extra weights");
  }
}

}  // namespace

std::string model_to_json(ChoiceModel& model) {
  json j;
  if (auto* fl = dynamic_cast<FeaturelessDeepHalo*>(&model)) {
    j = featureless_json(*fl);
  } else if (auto* ft = dynamic_cast<FeaturedDeepHalo*>(&model)) {
    j = featured_json(*ft);
  } else {
    throw ModelError("cannot serialize model kind '" + model.kind() + "'");
  }
  return j.dump(1) + "\n";
}

std::unique_ptr<ChoiceModel> model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ModelError(std::string("model file is not valid JSON: ") + e.what());
  }
  const int version = field<int>(j, "format_version");
  if (version != kModelFormatVersion) {
    throw ModelError("unsupported model format_version " + std::to_string(version));
  }
  const auto kind = field<std::string>(j, "kind");
  if (kind == "featureless") {
    FeaturelessConfig c;
    c.universe = field<int>(j, "J");
    c.width = field<int>(j, "J_prime");
    c.depth = field<int>(j, "L");
    c.activation = parse_activation(field<std::string>(j, "activation"));
    if (j.contains("rank_H") && !j.at("rank_H").is_null()) c.rank = field<int>(j, "rank_H");
    if (j.contains("preset")) c.preset = field<std::string>(j, "preset");
    if (j.contains("first_layer_residual")) c.first_layer_residual = field<bool>(j, "first_layer_residual");
    if (j.contains("diagonal_only")) c.diagonal_only = field<bool>(j, "diagonal_only");
    if (j.contains("output_trainable")) c.output_trainable = field<bool>(j, "output_trainable");
    auto m = std::make_unique<FeaturelessDeepHalo>(c, 0);
    load_weights(*m, field<json>(j, "matrices"));
    return m;
  }
  if (kind == "featured") {
    FeaturedConfig c;
    c.input_dim = field<int>(j, "d_x");
    c.dim = field<int>(j, "d");
    c.heads = field<int>(j, "H");
    c.depth = field<int>(j, "L");
    const auto sigma = field<std::string>(j, "sigma");
    if (sigma == "identity") {
      c.sigma = Activation::kLinear;
    } else if (sigma == "quadratic") {
      c.sigma = Activation::kQuadratic;
    } else {
      throw ModelError("unknown sigma '" + sigma + "'");
    }
    c.variant = parse_variant(field<std::string>(j, "variant"));
    if (j.contains("aggregation")) c.aggregation = parse_aggregation(field<std::string>(j, "aggregation"));
    if (j.contains("embedding")) c.embedding = parse_embedding(field<std::string>(j, "embedding"));
    if (j.contains("head")) c.head = parse_head(field<std::string>(j, "head"));
    auto m = std::make_unique<FeaturedDeepHalo>(c, 0);
    load_weights(*m, field<json>(j, "weights"));
    return m;
  }
  throw ModelError("unknown model kind '" + kind + "'");
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    out << contents;
    out.flush();
    if (!out) throw DataError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw DataError("cannot move temporary file onto '" + path + "'");
  }
}

void save_model(ChoiceModel& model, const std::string& path) {
  write_file_atomic(path, model_to_json(model));
}

std::unique_ptr<ChoiceModel> load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace deephalo
