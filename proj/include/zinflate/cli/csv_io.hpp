#pragma once

#include "zinflate/simgen.hpp"
#include "zinflate/zim_model.hpp"

#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace zinflate::cli {

struct IngestOptions {
    bool standardize = false;
    /// Covariate names entering the phi / lambda models; nullopt means all.
    std::optional<std::vector<std::string>> phi_covars;
    std::optional<std::vector<std::string>> lambda_covars;
    /// When false the y column may be absent (covariate grids).
    bool require_y = true;
};

/// Header row with s1, s2, y and any number of numeric covariate columns.
/// Errors name the offending line (header is line 1).
SpatialDataset parse_csv(std::istream& in, const IngestOptions& opts = {});
SpatialDataset ingest_csv(const std::filesystem::path& path, const IngestOptions& opts = {});

/// Splits "a,b,c"; "all" gives nullopt and "none" an empty list.
std::optional<std::vector<std::string>> parse_name_list(const std::string& text);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// s1,s2,y,<covariates> with round-trip exact numbers.
std::string dataset_csv(const SpatialDataset& ds);
std::string truth_json(const SimulatedData& sim, const SimScenario& sc);

/// Writes to a sibling temporary file, then renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace zinflate::cli
