// SPDX-License-Identifier: Apache-2.0
#include "json_io.hpp"

#include <cmath>
#include <limits>

namespace nss::json_io {

Json to_json(const TrainConfig& c) {
  Json j;
  j["est_type"] = std::string(to_string(c.est_type));
  j["max_time"] = c.max_time;
  j["batch_size"] = c.batch_size;
  j["seq_fit_len"] = c.seq_fit_len;
  j["seq_est_len"] = c.seq_est_len;
  j["est_hidden_size"] = c.est_hidden_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["val_fraction"] = c.val_fraction;
  j["val_stride"] = c.val_stride;
  j["val_every"] = c.val_every;
  j["max_iters"] = c.max_iters ? Json(*c.max_iters) : Json(nullptr);
  j["normalize"] = c.normalize;
  return j;
}

TrainConfig config_from_json(const Json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "est_type") c.est_type = parse_estimator_kind(value.get<std::string>());
    else if (key == "max_time") c.max_time = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<Index>();
    else if (key == "seq_fit_len") c.seq_fit_len = value.get<Index>();
    else if (key == "seq_est_len") c.seq_est_len = value.get<Index>();
    else if (key == "est_hidden_size") c.est_hidden_size = value.get<Index>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "val_fraction") c.val_fraction = value.get<double>();
    else if (key == "val_stride") c.val_stride = value.get<Index>();
    else if (key == "val_every") c.val_every = value.get<Index>();
    else if (key == "max_iters") c.max_iters = value.is_null() ? std::nullopt : std::optional<Index>(value.get<Index>());
    else if (key == "normalize") c.normalize = value.get<bool>();
    else throw ConfigError("unknown training config field '" + key + "'");
  }
  return c;
}

Json to_json(const ModelSpec& s) {
  Json j;
  j["n_x"] = s.n_x;
  j["n_u"] = s.n_u;
  j["n_y"] = s.n_y;
  j["hidden_f"] = s.hidden_f;
  j["hidden_g"] = s.hidden_g;
  j["skip_f"] = s.skip_f;
  j["skip_g"] = s.skip_g;
  return j;
}

ModelSpec model_spec_from_json(const Json& j, ModelSpec s) {
  if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "n_x") s.n_x = value.get<Index>();
    else if (key == "n_u") s.n_u = value.get<Index>();
    else if (key == "n_y") s.n_y = value.get<Index>();
    else if (key == "hidden_f") s.hidden_f = value.get<Index>();
    else if (key == "hidden_g") s.hidden_g = value.get<Index>();
    else if (key == "skip_f") s.skip_f = value.get<bool>();
    else if (key == "skip_g") s.skip_g = value.get<bool>();
    else throw ConfigError("unknown model field '" + key + "'");
  }
  return s;
}

Json to_json(const VectorXd& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

VectorXd vector_from_json(const Json& j) {
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_or_inf(const Json& j) { return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>(); }

}  // namespace nss::json_io
