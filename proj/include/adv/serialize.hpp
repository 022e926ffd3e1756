#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "adv/network.hpp"

namespace adv {

// Weight container: one JSON header line (descriptors, shapes, seed, format
// version) followed by the raw little-endian float32 parameters in layer
// order, weight before bias.
inline constexpr int kAdvwVersion = 1;

void save_weights(const Network<float>& net, const std::string& path,
                  const nlohmann::json& train_meta = nullptr);
Network<float> load_weights(const std::string& path, nlohmann::json* train_meta = nullptr);

nlohmann::json layer_descs_to_json(const std::vector<LayerDesc>& descs);
std::vector<LayerDesc> layer_descs_from_json(const nlohmann::json& j);

// Shortest float text that reparses to the same value.
std::string format_float(double v);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_csv(const std::string& path);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

// Standard result envelope: config, seed, version string, wall-clock timing.
// The timestamp lives here and only here.
nlohmann::json run_envelope(const nlohmann::json& config, std::uint64_t seed, double wall_seconds);

}  // namespace adv
