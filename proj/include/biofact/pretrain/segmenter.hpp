#pragma once

#include <cstdint>
#include <string>

#include "biofact/cohort/cohort.hpp"

namespace biofact::pretrain {

/// Report corruption applied to the liver/tumor segments.
enum class SegmentationMode {
    identity,     // segments as produced
    random_split, // liver and tumor tokens pooled, shuffled and re-split at the original lengths
    swapped,      // liver <-> tumor
    unsegmented,  // both pathway segments carry the full liver+tumor text
};

std::string to_string(SegmentationMode m);
/// Throws ConfigError for unknown names.
SegmentationMode parse_segmentation_mode(const std::string& name);

/// Splits a report into liver / tumor / neutral segments.
class ReportSegmenter {
public:
    virtual ~ReportSegmenter() = default;
    virtual cohort::ReportSegments segment(const cohort::ReportSegments& report, const std::string& patient_id) const = 0;
};

/// The synthetic cohort's reports are generated pre-split, so the shipped
/// segmenter passes them through, optionally corrupted for ablations.
class SyntheticSegmenter final : public ReportSegmenter {
public:
    explicit SyntheticSegmenter(SegmentationMode mode = SegmentationMode::identity, std::uint64_t seed = 0)
        : mode_(mode), seed_(seed)
    {
    }

    cohort::ReportSegments segment(const cohort::ReportSegments& report, const std::string& patient_id) const override;
    SegmentationMode mode() const { return mode_; }

private:
    SegmentationMode mode_;
    std::uint64_t seed_;
};

cohort::ReportSegments segment_report(const cohort::ReportSegments& report, const ReportSegmenter& segmenter,
                                      const std::string& patient_id);

} // namespace biofact::pretrain
