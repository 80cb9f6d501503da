#include "pir/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace pir {

std::string_view to_string(Activation act) {
  return act == Activation::Tanh ? "tanh" : "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

Json mlp_to_json(const Mlp<double>& net) {
  Json weights = Json::array();
  Json biases = Json::array();
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto& w = net.weight(l);
    std::vector<double> row_major;
    row_major.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) row_major.push_back(w(r, c));
    weights.push_back(row_major);
    const auto& b = net.bias(l);
    biases.push_back(std::vector<double>(b.data(), b.data() + b.size()));
  }
  return Json{{"format", "pir-ckpt"},
              {"version", 1},
              {"layer_sizes", net.layer_sizes()},
              {"activation", std::string(to_string(net.activation()))},
              {"weights", std::move(weights)},
              {"biases", std::move(biases)}};
}

Mlp<double> mlp_from_json(const Json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "pir-ckpt")
    throw std::runtime_error("checkpoint: missing format tag \"pir-ckpt\"");
  if (doc.value("version", 0) != 1) throw std::runtime_error("checkpoint: unsupported version");
  Mlp<double> net(doc.at("layer_sizes").get<std::vector<int>>(),
                  activation_from_string(doc.at("activation").get<std::string>()));
  const auto& weights = doc.at("weights");
  const auto& biases = doc.at("biases");
  if (weights.size() != static_cast<std::size_t>(net.num_layers()) ||
      biases.size() != static_cast<std::size_t>(net.num_layers()))
    throw std::runtime_error("checkpoint: layer count does not match layer_sizes");
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto w = weights[l].get<std::vector<double>>();
    const auto b = biases[l].get<std::vector<double>>();
    auto& W = net.weight(l);
    if (w.size() != static_cast<std::size_t>(W.size()) || b.size() != static_cast<std::size_t>(net.bias(l).size()))
      throw std::runtime_error("checkpoint: parameter count mismatch at layer " + std::to_string(l));
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = w[i++];
    for (std::size_t k = 0; k < b.size(); ++k) net.bias(l)(static_cast<Eigen::Index>(k)) = b[k];
  }
  net.validate();
  return net;
}

Json checkpoint_document(const Mlp<double>& net, const std::string& role) {
  Json doc = mlp_to_json(net);
  if (!role.empty()) doc["role"] = role;
  return doc;
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << doc.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace pir
