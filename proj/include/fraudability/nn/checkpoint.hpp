#pragma once

// Parameter checkpoints: names, shapes and flat value arrays as JSON.
// Doubles are written in shortest round-trip form, so load(save(m)) is exact.

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraudability/nn/autodiff.hpp"

namespace fraudability::nn {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json save_parameters(std::span<Parameter* const> params) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Parameter* p : params)
    arr.push_back({{"name", p->name}, {"shape", p->value.shape}, {"values", p->value.values}});
  return {{"format", "fraudability-nn"}, {"version", kCheckpointVersion}, {"parameters", std::move(arr)}};
}

inline void load_parameters(std::span<Parameter* const> params, const nlohmann::json& j) {
  try {
    require(j.at("format").get<std::string>() == "fraudability-nn", ErrorCategory::parse, "checkpoint: wrong format tag");
    require(j.at("version").get<int>() == kCheckpointVersion, ErrorCategory::parse, "checkpoint: unsupported version");
    const auto& arr = j.at("parameters");
    require(arr.size() == params.size(), ErrorCategory::shape, "checkpoint: parameter count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto shape = arr[k].at("shape").get<std::vector<std::size_t>>();
      auto values = arr[k].at("values").get<std::vector<double>>();
      require(shape == params[k]->value.shape, ErrorCategory::shape,
              "checkpoint: shape mismatch for " + params[k]->name);
      params[k]->value = Tensor(std::move(shape), std::move(values));
      params[k]->grad = Tensor(params[k]->value.shape);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::parse, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace fraudability::nn
