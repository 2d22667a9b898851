// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include "nss/training.hpp"

namespace nss::json_io {

using Json = nlohmann::ordered_json;

Json to_json(const TrainConfig& c);

/// Fields absent from j keep the values of `base`.
TrainConfig config_from_json(const Json& j, TrainConfig base = {});

Json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const Json& j, ModelSpec base = {});

Json to_json(const VectorXd& v);
VectorXd vector_from_json(const Json& j);

/// Non-finite numbers become null; null reads back as +inf.
Json number_or_null(double v);
double number_or_inf(const Json& j);

}  // namespace nss::json_io
