#include "biofact/pretrain/segmenter.hpp"

#include "biofact/core/rng.hpp"

namespace biofact::pretrain {

std::string to_string(SegmentationMode m)
{
    switch (m) {
    case SegmentationMode::identity: return "identity";
    case SegmentationMode::random_split: return "random_split";
    case SegmentationMode::swapped: return "swapped";
    case SegmentationMode::unsegmented: return "unsegmented";
    }
    return "unknown";
}

SegmentationMode parse_segmentation_mode(const std::string& name)
{
    if (name == "identity") return SegmentationMode::identity;
    if (name == "random_split") return SegmentationMode::random_split;
    if (name == "swapped") return SegmentationMode::swapped;
    if (name == "unsegmented" || name == "none") return SegmentationMode::unsegmented;
    throw ConfigError("unknown segmentation mode '" + name +
                      "' (expected identity, random_split, swapped or unsegmented)");
}

cohort::ReportSegments SyntheticSegmenter::segment(const cohort::ReportSegments& report,
                                                   const std::string& patient_id) const
{
    cohort::ReportSegments out = report;
    switch (mode_) {
    case SegmentationMode::identity: break;
    case SegmentationMode::swapped: std::swap(out.liver, out.tumor); break;
    case SegmentationMode::random_split: {
        cohort::TokenSeq pool = report.liver;
        pool.insert(pool.end(), report.tumor.begin(), report.tumor.end());
        Rng rng(derive_seed(derive_seed(seed_, "random-split"), patient_id));
        rng.shuffle(pool);
        const auto cut = static_cast<std::ptrdiff_t>(report.liver.size());
        out.liver.assign(pool.begin(), pool.begin() + cut);
        out.tumor.assign(pool.begin() + cut, pool.end());
        break;
    }
    case SegmentationMode::unsegmented: {
        cohort::TokenSeq full = report.liver;
        full.insert(full.end(), report.tumor.begin(), report.tumor.end());
        out.liver = full;
        out.tumor = full;
        break;
    }
    }
    return out;
}

cohort::ReportSegments segment_report(const cohort::ReportSegments& report, const ReportSegmenter& segmenter,
                                      const std::string& patient_id)
{
    return segmenter.segment(report, patient_id);
}

} // namespace biofact::pretrain
