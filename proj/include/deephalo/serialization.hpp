#pragma once

// JSON model files.
//
// featureless: {format_version, kind, preset, J, J_prime, L, activation,
//               rank_H (int or null), first_layer_residual, diagonal_only,
//               output_trainable, matrices: {name: row-major nested arrays}}
// featured:    {format_version, kind, d_x, d, H, L, sigma, variant,
//               aggregation, embedding, head, weights: {name: nested arrays}}

#include <memory>
#include <string>

#include "deephalo/choice_model.hpp"

namespace deephalo {

inline constexpr int kModelFormatVersion = 1;

std::string model_to_json(ChoiceModel& model);
/// Throws ModelError on unknown kinds, versions or malformed weights.
std::unique_ptr<ChoiceModel> model_from_json(const std::string& text);

void save_model(ChoiceModel& model, const std::string& path);
std::unique_ptr<ChoiceModel> load_model(const std::string& path);

/// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace deephalo
