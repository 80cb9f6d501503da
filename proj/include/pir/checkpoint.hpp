#pragma once

// JSON parameter checkpoints: {"format":"pir-ckpt","version":1,...}. Doubles
// are written in shortest round-trip form, so save/load is exact.

#include "pir/tensorcore.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace pir {

using Json = nlohmann::json;

Json mlp_to_json(const Mlp<double>& net);
Mlp<double> mlp_from_json(const Json& doc);

// Whole-document helpers; `role` is stored as a tag when non-empty.
Json checkpoint_document(const Mlp<double>& net, const std::string& role = {});
void write_json_file(const std::filesystem::path& path, const Json& doc);
Json read_json_file(const std::filesystem::path& path);

}  // namespace pir
