// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "json_io.hpp"
#include "nss/training.hpp"

// File layout: a pretty-printed JSON object whose final member is
//   "checksum": "<crc32 hex>"
// computed over the exact bytes of the same object printed without that member.

namespace nss {

namespace {

using json_io::Json;

constexpr std::string_view kChecksumMarker = ",\n  \"checksum\": \"";

std::string crc_hex(std::string_view bytes) {
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

Json params_to_json(const ParamStore<double>& store) {
  Json out = Json::object();
  for (const auto& e : store.entries()) {
    Json data = Json::array();
    for (Index k = 0; k < e.value.size(); ++k) data.push_back(e.value.reshaped()(k));
    out[e.name] = Json{{"rows", e.value.rows()}, {"cols", e.value.cols()}, {"data", std::move(data)}};
  }
  return out;
}

void params_from_json(const Json& j, ParamStore<double>& into) {
  for (auto& e : into.entries()) {
    if (!j.contains(e.name)) throw IoError("checkpoint: missing parameter '" + e.name + "'");
    const auto& p = j.at(e.name);
    const Index rows = p.at("rows").get<Index>();
    const Index cols = p.at("cols").get<Index>();
    const auto& data = p.at("data");
    if (rows != e.value.rows() || cols != e.value.cols() || static_cast<Index>(data.size()) != rows * cols) {
      throw IoError("checkpoint: parameter '" + e.name + "' has the wrong shape");
    }
    for (Index k = 0; k < rows * cols; ++k) e.value.reshaped()(k) = data[static_cast<std::size_t>(k)].get<double>();
  }
  if (j.size() != into.size()) throw IoError("checkpoint: unexpected extra parameters");
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  Json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["config"] = json_io::to_json(c.config);
  j["model"] = json_io::to_json(c.model.spec);
  j["estimator"] = Json{{"kind", std::string(to_string(c.estimator.spec.kind))},
                        {"m_e", c.estimator.spec.m_e},
                        {"hidden_size", c.estimator.spec.hidden_size}};
  j["normalizer"] = Json{{"u_mean", json_io::to_json(c.normalizer.u_mean)},
                         {"u_std", json_io::to_json(c.normalizer.u_std)},
                         {"y_mean", json_io::to_json(c.normalizer.y_mean)},
                         {"y_std", json_io::to_json(c.normalizer.y_std)}};
  j["best_val_loss"] = json_io::number_or_null(c.best_val_loss);
  j["iteration"] = c.iteration;
  j["rng_digest"] = c.rng_digest;
  j["params"] = params_to_json(merge(c.model.params, c.estimator.params));

  std::string body = j.dump(2);
  const std::string crc = crc_hex(body);
  body.insert(body.size() - 2, std::string(kChecksumMarker) + crc + "\"");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << body << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) text.pop_back();

  const auto pos = text.rfind(kChecksumMarker);
  if (pos == std::string::npos) throw ChecksumError("'" + path.string() + "': missing checksum");
  const auto crc_begin = pos + kChecksumMarker.size();
  const auto crc_end = text.find('"', crc_begin);
  if (crc_end == std::string::npos || text.substr(crc_end) != "\"\n}") {
    throw ChecksumError("'" + path.string() + "': malformed checksum trailer");
  }
  const std::string stored = text.substr(crc_begin, crc_end - crc_begin);
  const std::string body = text.substr(0, pos) + "\n}";
  if (crc_hex(body) != stored) throw ChecksumError("'" + path.string() + "': checksum mismatch (file corrupted)");

  Json j;
  try {
    j = Json::parse(body);
  } catch (const std::exception& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion) {
      throw IoError("'" + path.string() + "': schema version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointSchemaVersion));
    }
    Checkpoint c;
    c.config = json_io::config_from_json(j.at("config"));
    const ModelSpec ms = json_io::model_spec_from_json(j.at("model"));
    const auto& ej = j.at("estimator");
    const EstimatorSpec es{parse_estimator_kind(ej.at("kind").get<std::string>()), ej.at("m_e").get<Index>(),
                           ej.at("hidden_size").get<Index>()};
    c.model = NeuralStateSpaceModel<double>::init(ms, 0);
    c.estimator = StateEstimator<double>::init(es, ms, 0);
    ParamStore<double> all = merge(c.model.params, c.estimator.params);
    params_from_json(j.at("params"), all);
    for (auto& e : c.model.params.entries()) e.value = all[e.name];
    for (auto& e : c.estimator.params.entries()) e.value = all[e.name];

    const auto& nj = j.at("normalizer");
    c.normalizer = {json_io::vector_from_json(nj.at("u_mean")), json_io::vector_from_json(nj.at("u_std")),
                    json_io::vector_from_json(nj.at("y_mean")), json_io::vector_from_json(nj.at("y_std"))};
    c.best_val_loss = json_io::number_or_inf(j.at("best_val_loss"));
    c.iteration = j.at("iteration").get<Index>();
    c.rng_digest = j.at("rng_digest").get<std::string>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace nss
