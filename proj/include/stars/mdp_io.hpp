#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "stars/mdp.hpp"

namespace stars {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

/// {"states":[..], "actions":{q:[..]}, "trans":{"q|a":[["q'",p],..]}, "initial":"q0"}
/// Throws InvalidMdp for schema or validation failures.
Mdp mdp_from_json(const json& j);
ordered_json mdp_to_json(const Mdp& m);

Mdp load_mdp(const std::filesystem::path& path);
void save_mdp(const Mdp& m, const std::filesystem::path& path);

/// Whole-file helpers shared by every loader; throw ParseError.
json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace stars
