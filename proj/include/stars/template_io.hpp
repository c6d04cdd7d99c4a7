#pragma once

#include <filesystem>

#include "stars/mdp_io.hpp"
#include "stars/template.hpp"

namespace stars {

/// Template document: the four template fields keyed by state/action names,
/// plus "mode", "objectives" and "disabled" so that a loaded template can be
/// re-synthesized. Documents without "objectives" load as opaque templates.
ordered_json synthesis_to_json(const Synthesis& s, const Mdp& mdp);
Synthesis synthesis_from_json(const json& j, const Mdp& mdp);

ordered_json template_to_json(const StrategyTemplate& t, const Mdp& mdp);
StrategyTemplate template_from_json(const json& j, const Mdp& mdp);

/// {"buchi":[state names]} or {"coloring":{state: color}}.
ordered_json objective_to_json(const ParityObjective& obj, const Mdp& mdp);
ParityObjective objective_from_json(const json& j, const Mdp& mdp);

/// Lists of state names or of [x, y] grid cells (named "x,y").
std::vector<StateId> states_from_json(const json& j, const Mdp& mdp);

ordered_json edge_to_json(EdgeId e, const Mdp& mdp);
EdgeId edge_from_json(const json& j, const Mdp& mdp);

Synthesis load_synthesis(const std::filesystem::path& path, const Mdp& mdp);
void save_synthesis(const Synthesis& s, const Mdp& mdp, const std::filesystem::path& path);

} // namespace stars
