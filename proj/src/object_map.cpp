#include "objstyle/object_map.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "objstyle/errors.hpp"

namespace objstyle {

namespace {

std::vector<std::string> sorted_difference(const std::vector<std::string>& all,
                                           const std::set<std::string>& used) {
    std::vector<std::string> out;
    for (const auto& l : all)
        if (!used.count(l)) out.push_back(l);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::uint8_t> union_of(const SegmentationMask& mask,
                                   const std::vector<std::string>& labels) {
    std::vector<std::uint8_t> out(mask.channels.front().size(), 0);
    for (const auto& label : labels) {
        const int k = mask.index_of(label);
        for (size_t p = 0; p < out.size(); ++p)
            out[p] = out[p] || mask.channels[k][p];
    }
    return out;
}

} // namespace

std::string to_string(StpKind kind) {
    switch (kind) {
        case StpKind::E: return "STP-E";
        case StpKind::C: return "STP-C";
        case StpKind::S: return "STP-S";
    }
    return "?";
}

ObjectMap build_map(const SegmentationMask& content_mask, const SegmentationMask& style_mask,
                    const std::optional<PairList>& user_pairs) {
    ObjectMap map;
    std::set<std::string> used_content, used_style;

    if (user_pairs) {
        for (const auto& [c, s] : *user_pairs) {
            if (content_mask.index_of(c) < 0)
                throw InvalidPair("unknown content label in pair: " + c);
            if (style_mask.index_of(s) < 0)
                throw InvalidPair("unknown style label in pair: " + s);
            if (!used_content.insert(c).second)
                throw InvalidPair("content label paired twice: " + c);
            if (!used_style.insert(s).second)
                throw InvalidPair("style label paired twice: " + s);
            map.pairs.emplace_back(c, s);
        }
    } else {
        // exact label equality; deterministic order
        std::vector<std::string> shared;
        for (const auto& c : content_mask.labels)
            if (style_mask.index_of(c) >= 0) shared.push_back(c);
        std::sort(shared.begin(), shared.end());
        for (const auto& l : shared) {
            map.pairs.emplace_back(l, l);
            used_content.insert(l);
            used_style.insert(l);
        }
    }

    map.unmapped_content = sorted_difference(content_mask.labels, used_content);
    map.unmapped_style = sorted_difference(style_mask.labels, used_style);

    if (!map.unmapped_content.empty() && !map.unmapped_style.empty()) {
        if (!user_pairs)
            throw NonMaximalAmbiguity(
                "labels left on both sides with no equal names; supply an object-map file");
        throw InconsistentMap("user pairs leave unmapped labels on both sides");
    }
    return map;
}

StpKind classify(const ObjectMap& map, int m, int n) {
    if (!map.unmapped_content.empty() && !map.unmapped_style.empty())
        throw InconsistentMap("both unmapped sets are non-empty");
    if (m == n && map.unmapped_content.empty() && map.unmapped_style.empty())
        return StpKind::E;
    if (m > n) return StpKind::C;
    if (n > m) return StpKind::S;
    // m == n but the map is not full
    throw InconsistentMap("equal object counts but the map is not total");
}

std::vector<std::uint8_t> unmapped_content_mask(const ObjectMap& map,
                                                const SegmentationMask& content_mask) {
    if (map.unmapped_content.empty() || !map.unmapped_style.empty())
        throw WrongKind("unmapped_content_mask requires an STP-C instance");
    return union_of(content_mask, map.unmapped_content);
}

std::vector<std::uint8_t> unmapped_style_mask(const ObjectMap& map,
                                              const SegmentationMask& style_mask) {
    if (map.unmapped_style.empty() || !map.unmapped_content.empty())
        throw WrongKind("unmapped_style_mask requires an STP-S instance");
    return union_of(style_mask, map.unmapped_style);
}

std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>>
mapped_pair_masks(const ObjectMap& map, const SegmentationMask& content_mask,
                  const SegmentationMask& style_mask) {
    std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>> out;
    out.reserve(map.pairs.size());
    for (const auto& [c, s] : map.pairs)
        out.emplace_back(content_mask.channels[content_mask.index_of(c)],
                         style_mask.channels[style_mask.index_of(s)]);
    return out;
}

PairList load_pair_list(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw UnreadableFile("cannot open object map: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UnreadableFile("bad object-map JSON in " + path + ": " + e.what());
    }
    if (!j.contains("pairs") || !j["pairs"].is_array())
        throw UnreadableFile("object map must contain a \"pairs\" array: " + path);
    PairList pairs;
    for (const auto& p : j["pairs"]) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
            throw UnreadableFile("object-map pairs must be [content,style] strings: " + path);
        pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
    }
    return pairs;
}

} // namespace objstyle
