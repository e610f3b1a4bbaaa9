#include "curricullm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace curricullm {

std::string format_stat(double value) {
    // llround is half-away-from-zero, which is the rendering contract
    const long long scaled = std::llround(value * 1000.0);
    const long long mag = std::llabs(scaled);
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s%lld.%03lld", scaled < 0 ? "-" : "", mag / 1000, mag % 1000);
    std::string s(buf);
    while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
    return s;
}

TrajectorySummary summarize(const TrajectoryBatch& batch, const EnvironmentDefinition& env) {
    if (batch.episodes.empty()) throw EmptyBatch();

    TrajectorySummary summary;
    summary.episode_count = static_cast<int>(batch.episodes.size());
    for (const auto& v : env.variables) {
        summary.means[v.name].assign(v.dims, 0.0);
        summary.stddevs[v.name].assign(v.dims, 0.0);
        summary.minima[v.name].assign(v.dims, std::numeric_limits<double>::infinity());
        summary.maxima[v.name].assign(v.dims, -std::numeric_limits<double>::infinity());
    }

    long long steps = 0;
    long long total_length = 0;
    int successes = 0;
    std::map<std::string, std::vector<double>> sum_sq;
    for (const auto& v : env.variables) sum_sq[v.name].assign(v.dims, 0.0);

    for (const auto& episode : batch.episodes) {
        total_length += episode.length;
        if (episode.success) ++successes;
        if (episode.faulted) {
            ++summary.fault_count;
            continue;
        }
        for (const auto& t : episode.transitions) {
            ++steps;
            for (const auto& v : env.variables) {
                const auto& vals = t.next_observation.values.at(v.name);
                auto& mean = summary.means[v.name];
                auto& sq = sum_sq[v.name];
                auto& mn = summary.minima[v.name];
                auto& mx = summary.maxima[v.name];
                for (int i = 0; i < v.dims; ++i) {
                    mean[i] += vals[i];
                    sq[i] += vals[i] * vals[i];
                    mn[i] = std::min(mn[i], vals[i]);
                    mx[i] = std::max(mx[i], vals[i]);
                }
            }
        }
    }

    if (steps > 0) {
        for (const auto& v : env.variables) {
            auto& mean = summary.means[v.name];
            auto& dev = summary.stddevs[v.name];
            const auto& sq = sum_sq[v.name];
            for (int i = 0; i < v.dims; ++i) {
                mean[i] /= steps;
                dev[i] = std::sqrt(std::max(sq[i] / steps - mean[i] * mean[i], 0.0));
            }
        }
    } else {
        for (const auto& v : env.variables) {
            summary.minima[v.name].assign(v.dims, 0.0);
            summary.maxima[v.name].assign(v.dims, 0.0);
        }
    }
    summary.episode_length_mean = static_cast<double>(total_length) / summary.episode_count;
    summary.success_rate = static_cast<double>(successes) / summary.episode_count;
    return summary;
}

std::string render_summaries(const std::vector<TrajectorySummary>& summaries,
                             const EnvironmentDefinition& env) {
    std::ostringstream out;
    for (std::size_t k = 0; k < summaries.size(); ++k) {
        const TrajectorySummary& s = summaries[k];
        if (k) out << "\n";
        out << "Agent " << k << ":\n";
        for (const auto& v : env.variables) {
            out << v.name << ": [";
            const auto& mean = s.means.at(v.name);
            for (int i = 0; i < v.dims; ++i) {
                if (i) out << ' ';
                out << format_stat(mean[i]);
            }
            out << "]\n";
        }
        out << "episode_length: " << format_stat(s.episode_length_mean) << "\n";
        out << "success_rate: " << format_stat(s.success_rate) << "\n";
    }
    return out.str();
}

namespace {

nlohmann::json stat_map_to_json(const std::map<std::string, std::vector<double>>& m) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [name, vals] : m) doc[name] = vals;
    return doc;
}

std::map<std::string, std::vector<double>> stat_map_from_json(const nlohmann::json& doc) {
    std::map<std::string, std::vector<double>> m;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        m[it.key()] = it.value().get<std::vector<double>>();
    }
    return m;
}

}  // namespace

std::string summary_to_json(const TrajectorySummary& summary) {
    nlohmann::json doc;
    doc["candidate_index"] = summary.candidate_index;
    doc["episode_count"] = summary.episode_count;
    doc["episode_length_mean"] = summary.episode_length_mean;
    doc["fault_count"] = summary.fault_count;
    doc["max"] = stat_map_to_json(summary.maxima);
    doc["mean"] = stat_map_to_json(summary.means);
    doc["min"] = stat_map_to_json(summary.minima);
    doc["std"] = stat_map_to_json(summary.stddevs);
    doc["success_rate"] = summary.success_rate;
    return doc.dump(2) + "\n";
}

TrajectorySummary summary_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed summary record: ") + e.what());
    }
    TrajectorySummary s;
    s.candidate_index = doc.at("candidate_index").get<int>();
    s.episode_count = doc.at("episode_count").get<int>();
    s.episode_length_mean = doc.at("episode_length_mean").get<double>();
    s.fault_count = doc.at("fault_count").get<int>();
    s.maxima = stat_map_from_json(doc.at("max"));
    s.means = stat_map_from_json(doc.at("mean"));
    s.minima = stat_map_from_json(doc.at("min"));
    s.stddevs = stat_map_from_json(doc.at("std"));
    s.success_rate = doc.at("success_rate").get<double>();
    return s;
}

}  // namespace curricullm
