#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "biofact/cohort/cohort.hpp"

namespace biofact::cohort {

// Cohort directory layout:
//   cohort.csv     patient_id,time_months,event,treated,palbi_class,bilobar,immunoscore_class
//   latent.csv     patient_id,split,liver_0..,tumor_0..,neutral_0..
//   studies.bin    versioned little-endian binary of patch tokens and occupancy
//   reports.json   {"vocab_size":..,"patients":[{"patient_id":..,"liver":[..],"tumor":[..],"neutral":[..]}]}
//   manifest.json  cohort config, config hash, split sizes

nlohmann::json to_json(const CohortConfig& cfg);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
CohortConfig cohort_config_from_json(const nlohmann::json& j);

std::string write_cohort_csv(const Cohort& c);
std::string write_latent_csv(const Cohort& c);
std::string write_studies_bin(const Cohort& c);
std::string write_reports_json(const Cohort& c);
nlohmann::json manifest_json(const Cohort& c);

/// Writes all cohort files into `dir` (created if absent). Throws IoError.
void export_cohort(const Cohort& c, const std::string& dir);
/// Reads a cohort back. Throws ParseError (with line or byte offset) on malformed
/// files and IoError on missing ones; never returns a partial cohort.
Cohort import_cohort(const std::string& dir);

inline constexpr char kStudiesMagic[8] = {'B', 'F', 'S', 'T', 'U', 'D', 'Y', '1'};
inline constexpr std::uint32_t kStudiesVersion = 1;

} // namespace biofact::cohort
