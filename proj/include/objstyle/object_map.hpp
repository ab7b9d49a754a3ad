#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "objstyle/image.hpp"

namespace objstyle {

/// Style-transfer problem class: equal object counts, content-heavy
/// (style diffusion) or style-heavy (style utilization).
enum class StpKind { E, C, S };

std::string to_string(StpKind kind);

/// One-to-one pairing of content object labels with style object labels.
/// Labels missing from the pairs land in exactly one of the unmapped sets.
struct ObjectMap {
    std::vector<std::pair<std::string, std::string>> pairs; // (content, style)
    std::vector<std::string> unmapped_content;
    std::vector<std::string> unmapped_style;
};

using PairList = std::vector<std::pair<std::string, std::string>>;

/// Builds the object map. With user pairs they are honored verbatim;
/// otherwise labels are auto-paired by exact string equality. Auto mode
/// refuses instances that leave unequal labels on both sides
/// (NonMaximalAmbiguity) since no maximal map can be inferred.
ObjectMap build_map(const SegmentationMask& content_mask, const SegmentationMask& style_mask,
                    const std::optional<PairList>& user_pairs = std::nullopt);

/// m = content object count, n = style object count.
StpKind classify(const ObjectMap& map, int m, int n);

/// Union of the unmapped content channels (theta_{c,n}); kind must be C.
std::vector<std::uint8_t> unmapped_content_mask(const ObjectMap& map,
                                                const SegmentationMask& content_mask);

/// Union of the unmapped style channels (theta_{s,m}); kind must be S.
std::vector<std::uint8_t> unmapped_style_mask(const ObjectMap& map,
                                              const SegmentationMask& style_mask);

/// Aligned (content channel, style channel) rasters for every mapped pair.
std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>>
mapped_pair_masks(const ObjectMap& map, const SegmentationMask& content_mask,
                  const SegmentationMask& style_mask);

/// Reads `{"pairs": [["content_label","style_label"], ...]}`.
PairList load_pair_list(const std::string& path);

} // namespace objstyle
