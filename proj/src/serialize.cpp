#include "adv/serialize.hpp"

#include <bit>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adv/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "advw weight files are little-endian; big-endian hosts are unsupported");

namespace adv {

using nlohmann::json;

json layer_descs_to_json(const std::vector<LayerDesc>& descs) {
  json arr = json::array();
  for (const LayerDesc& d : descs) {
    json l{{"kind", layer_kind_name(d.kind)}};
    switch (d.kind) {
      case LayerKind::Dense: l["units"] = d.units; break;
      case LayerKind::Conv2d:
        l["filters"] = d.filters;
        l["kernel"] = d.kernel;
        break;
      case LayerKind::MaxPool2d: l["pool"] = d.pool; break;
      default: break;
    }
    arr.push_back(std::move(l));
  }
  return arr;
}

std::vector<LayerDesc> layer_descs_from_json(const json& j) {
  std::vector<LayerDesc> descs;
  for (const json& l : j) {
    const std::string kind = l.at("kind").get<std::string>();
    if (kind == "dense") {
      descs.push_back(dense(l.at("units").get<int>()));
    } else if (kind == "relu") {
      descs.push_back(relu());
    } else if (kind == "conv2d") {
      descs.push_back(conv2d(l.at("filters").get<int>(), l.at("kernel").get<int>()));
    } else if (kind == "maxpool2d") {
      descs.push_back(maxpool2d(l.at("pool").get<int>()));
    } else if (kind == "flatten") {
      descs.push_back(flatten());
    } else {
      throw FormatError("unknown layer kind '" + kind + "' in weight header");
    }
  }
  return descs;
}

void save_weights(const Network<float>& net, const std::string& path, const json& train_meta) {
  json header{{"format", "advw"},
              {"version", kAdvwVersion},
              {"class_count", net.class_count},
              {"input_shape", net.input_shape},
              {"seed", net.seed},
              {"layers", layer_descs_to_json(net.descs())},
              {"param_count", net.param_count()}};
  if (!train_meta.is_null()) header["train_meta"] = train_meta;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << header.dump() << '\n';
  for (const auto& layer : net.layers) {
    if (!layer.desc.has_params()) continue;
    out.write(reinterpret_cast<const char*>(layer.weight.data.data()),
              static_cast<std::streamsize>(layer.weight.numel() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(layer.bias.data.data()),
              static_cast<std::streamsize>(layer.bias.numel() * sizeof(float)));
  }
  if (!out) throw IoError("short write to " + path);
}

Network<float> load_weights(const std::string& path, json* train_meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw FormatError(path + ": missing header line");

  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw FormatError(path + ": corrupt header: " + e.what());
  }
  if (header.value("format", "") != "advw") throw FormatError(path + ": not an advw weight file");
  const int version = header.value("version", -1);
  if (version != kAdvwVersion)
    throw FormatError(path + ": unsupported advw version " + std::to_string(version) + " (this build reads " +
                      std::to_string(kAdvwVersion) + ")");

  Shape input_shape;
  for (const json& d : header.at("input_shape")) input_shape.push_back(d.get<Index>());
  Network<float> net = build_network<float>(input_shape, header.at("class_count").get<int>(),
                                            layer_descs_from_json(header.at("layers")),
                                            header.value("seed", std::uint64_t(0)));

  for (auto& layer : net.layers) {
    if (!layer.desc.has_params()) continue;
    in.read(reinterpret_cast<char*>(layer.weight.data.data()),
            static_cast<std::streamsize>(layer.weight.numel() * sizeof(float)));
    in.read(reinterpret_cast<char*>(layer.bias.data.data()),
            static_cast<std::streamsize>(layer.bias.numel() * sizeof(float)));
    if (!in) throw FormatError(path + ": truncated weight payload");
  }
  char extra;
  if (in.read(&extra, 1)) throw FormatError(path + ": trailing bytes after weight payload");
  for (const auto& layer : net.layers)
    if (layer.desc.has_params() && !(all_finite(layer.weight) && all_finite(layer.bias)))
      throw FormatError(path + ": non-finite parameter values");

  if (train_meta) *train_meta = header.contains("train_meta") ? header["train_meta"] : json();
  return net;
}

std::string format_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  auto emit = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  if (!out) throw IoError("short write to " + path);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write to " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": invalid JSON: " + e.what());
  }
}

json run_envelope(const json& config, std::uint64_t seed, double wall_seconds) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return json{{"version", ADVLAB_VERSION},
              {"seed", seed},
              {"config", config},
              {"wall_seconds", wall_seconds},
              {"timestamp", stamp}};
}

}  // namespace adv
