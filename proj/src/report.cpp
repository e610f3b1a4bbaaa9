#include "curricullm/report.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "curricullm/errors.hpp"

namespace curricullm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptRunDirectory("cannot read '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string fixed3(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3) << v;
    return out.str();
}

}  // namespace

Report build_report(const fs::path& run_dir) {
    const fs::path manifest_path = run_dir / "manifest";
    if (!fs::exists(manifest_path)) {
        throw CorruptRunDirectory("no manifest in '" + run_dir.string() + "'");
    }
    json manifest;
    try {
        manifest = json::parse(read_text(manifest_path));
    } catch (const json::exception& e) {
        throw CorruptRunDirectory(std::string("malformed manifest: ") + e.what());
    }

    Report report;
    bool finished = false;
    std::ostringstream table;
    try {
        finished = manifest.at("finished").get<bool>();
        report.partial = !finished;
        table << "run: mode=" << manifest.at("mode").get<std::string>()
              << " env=" << manifest.at("env_id").get<std::string>()
              << " seed=" << manifest.at("seed").get<std::uint64_t>()
              << " status=" << (finished ? "complete" : "partial") << "\n\n";
        table << "stage        selected  success_rate  episode_length_mean  env_steps\n";
        for (const auto& row : manifest.at("metrics")) {
            const std::string stage = row.at("stage").get<std::string>();
            const int selected = row.at("selected_candidate").get<int>();
            table << std::left << std::setw(13) << stage << std::setw(10)
                  << (selected >= 0 ? std::to_string(selected) : std::string("-"))
                  << std::setw(14) << fixed3(row.at("success_rate").get<double>())
                  << std::setw(21) << fixed3(row.at("episode_length_mean").get<double>())
                  << row.at("env_steps").get<std::uint64_t>() << "\n";
        }
        if (finished) {
            table << "\nfinal target success_rate: "
                  << fixed3(manifest.at("final_success_rate").get<double>())
                  << "\nfinal mean sparse return:  "
                  << fixed3(manifest.at("final_mean_sparse_return").get<double>()) << "\n";
        } else {
            table << "\nrun is partial: " << manifest.at("completed_subtasks").get<int>()
                  << " subtask(s) completed\n";
        }
    } catch (const json::exception& e) {
        throw CorruptRunDirectory(std::string("malformed manifest: ") + e.what());
    }
    report.table = table.str();

    std::ostringstream curves;
    curves << "stage,candidate,iteration,mean_fitness,best_fitness,best_so_far\n";
    for (int n = 1; n < 100; ++n) {
        char stage[32];
        std::snprintf(stage, sizeof(stage), "subtask_%02d", n);
        const fs::path dir = run_dir / stage;
        if (!fs::exists(dir)) break;
        for (int k = 0;; ++k) {
            const fs::path curve = dir / ("candidate_" + std::to_string(k)) /
                                   "fitness_curve.csv";
            if (!fs::exists(dir / ("candidate_" + std::to_string(k)))) break;
            if (!fs::exists(curve)) continue;  // failed candidate, no curve
            std::istringstream lines(read_text(curve));
            std::string line;
            std::getline(lines, line);  // skip header
            while (std::getline(lines, line)) {
                if (line.empty()) continue;
                curves << stage << "," << k << "," << line << "\n";
            }
        }
    }
    report.curves_csv = curves.str();
    return report;
}

Report write_report(const fs::path& run_dir) {
    Report report = build_report(run_dir);
    std::ofstream(run_dir / "report.txt", std::ios::binary | std::ios::trunc) << report.table;
    std::ofstream(run_dir / "report_curves.csv", std::ios::binary | std::ios::trunc)
        << report.curves_csv;
    return report;
}

}  // namespace curricullm
