#pragma once

#include <filesystem>
#include <string>

namespace curricullm {

// Plain-text view of a run directory: a per-subtask result table plus the
// concatenated training curves in CSV form. Reads persisted artifacts only,
// so it works on partial runs and never needs a backend.
struct Report {
    std::string table;
    std::string curves_csv;
    bool partial = false;
};

// Throws CorruptRunDirectory when the directory has no readable manifest.
Report build_report(const std::filesystem::path& run_dir);

// Renders and stores report.txt and report_curves.csv inside the run
// directory. Output is a pure function of the persisted artifacts.
Report write_report(const std::filesystem::path& run_dir);

}  // namespace curricullm
