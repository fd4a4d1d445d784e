#include "advsr/map.hpp"

namespace advsr {

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::Origin: return "origin";
        case Stage::Delta: return "delta";
        case Stage::Cmvn: return "cmvn";
        case Stage::Final: return "final";
    }
    return "unknown";
}

Stage stage_from_name(const std::string& name) {
    if (name == "origin") return Stage::Origin;
    if (name == "delta") return Stage::Delta;
    if (name == "cmvn") return Stage::Cmvn;
    if (name == "final") return Stage::Final;
    throw std::invalid_argument("unknown feature stage: " + name);
}

std::string DefenseStack::describe() const {
    if (empty()) return "identity";
    std::string s;
    for (const auto& l : wave) {
        if (!s.empty()) s += "+";
        s += l.map->name();
    }
    if (tap) {
        if (!s.empty()) s += "+";
        s += tap->map->name();
    }
    return s;
}

}  // namespace advsr
