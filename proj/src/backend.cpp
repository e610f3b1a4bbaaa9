#include "curricullm/backend.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace curricullm {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

const char* role_name(Role role) {
    return role == Role::system ? "system" : "user";
}

}  // namespace

std::string CallKey::to_string() const {
    return stage + ":" + std::to_string(subtask) + ":" + std::to_string(attempt);
}

std::string ChatBackend::complete(const ChatRequest& request, const CallKey& key) {
    std::lock_guard<std::mutex> lock(mutex_);
    ++call_count_;
    return complete_locked(request, key);
}

LiveBackend::LiveBackend(std::string base_url, std::string model)
    : base_url_(std::move(base_url)), model_(std::move(model)) {
    if (base_url_.empty()) throw ConfigError("live backend needs a base URL");
}

std::string LiveBackend::complete_locked(const ChatRequest& request, const CallKey&) {
    nlohmann::json body;
    body["model"] = request.model.empty() ? model_ : request.model;
    body["messages"] = nlohmann::json::array();
    for (const auto& m : request.messages) {
        body["messages"].push_back({{"role", role_name(m.role)}, {"content", m.content}});
    }
    body["temperature"] = request.temperature;
    body["n"] = request.candidate_count;

    httplib::Client client(base_url_);
    client.set_read_timeout(120, 0);
    client.set_connection_timeout(15, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(kApiKeyEnvVar)) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
        throw TransportError("chat completion request to " + base_url_ + " failed: " +
                             httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
        throw NonSuccessStatus(res->status);
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(res->body);
        return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("malformed chat completion response: ") + e.what());
    }
}

ScriptedBackend::ScriptedBackend(const std::string& fixture_path) {
    auto parsed = from_text(read_file(fixture_path));
    responses_ = std::move(parsed->responses_);
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_text(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed fixture file: ") + e.what());
    }
    std::unique_ptr<ScriptedBackend> backend(new ScriptedBackend());
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (it.value().is_string()) {
            backend->responses_[it.key()] = {it.value().get<std::string>()};
        } else {
            backend->responses_[it.key()] = it.value().get<std::vector<std::string>>();
        }
    }
    return backend;
}

std::string ScriptedBackend::complete_locked(const ChatRequest&, const CallKey& key) {
    const std::string fixture_key = key.stage + ":" + std::to_string(key.subtask);
    auto it = responses_.find(fixture_key);
    if (it == responses_.end()) {
        throw FixtureKeyMissing("no fixture for key '" + fixture_key + "'");
    }
    if (key.attempt >= static_cast<int>(it->second.size())) {
        throw FixtureExhausted("fixture '" + fixture_key + "' has " +
                               std::to_string(it->second.size()) + " response(s), attempt " +
                               std::to_string(key.attempt) + " requested");
    }
    return it->second[key.attempt];
}

ReplayBackend::ReplayBackend(std::string dir, std::unique_ptr<ChatBackend> live)
    : dir_(std::move(dir)), live_(std::move(live)) {
    std::filesystem::create_directories(dir_);
    load();
}

void ReplayBackend::load() {
    const auto path = std::filesystem::path(dir_) / "responses.json";
    if (!std::filesystem::exists(path)) return;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed replay cache: ") + e.what());
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        cache_[it.key()] = it.value().get<std::string>();
    }
}

void ReplayBackend::save() const {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [key, value] : cache_) doc[key] = value;
    std::ofstream out(std::filesystem::path(dir_) / "responses.json", std::ios::binary);
    out << doc.dump(2) << "\n";
}

std::string ReplayBackend::complete_locked(const ChatRequest& request, const CallKey& key) {
    const std::string k = key.to_string();
    auto it = cache_.find(k);
    if (it != cache_.end()) return it->second;
    if (!live_) throw FixtureKeyMissing("replay cache has no entry for '" + k + "' and no live backend");
    ++network_calls_;
    const std::string response = live_->complete(request, key);
    cache_[k] = response;
    save();
    return response;
}

std::unique_ptr<ChatBackend> make_backend(const std::string& spec) {
    auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon == std::string::npos ? spec.size() : colon);
    const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "scripted") {
        if (rest.empty()) throw ConfigError("scripted backend needs a fixture path");
        return std::make_unique<ScriptedBackend>(rest);
    }
    if (kind == "live") {
        auto comma = rest.rfind(',');
        if (comma == std::string::npos) {
            throw ConfigError("live backend spec is live:<base-url>,<model>");
        }
        return std::make_unique<LiveBackend>(rest.substr(0, comma), rest.substr(comma + 1));
    }
    if (kind == "replay") {
        auto comma = rest.find(',');
        if (comma == std::string::npos) {
            return std::make_unique<ReplayBackend>(rest, nullptr);
        }
        const std::string dir = rest.substr(0, comma);
        const std::string live_rest = rest.substr(comma + 1);
        auto comma2 = live_rest.rfind(',');
        if (comma2 == std::string::npos) {
            throw ConfigError("replay backend spec is replay:<dir>[,<base-url>,<model>]");
        }
        return std::make_unique<ReplayBackend>(
            dir, std::make_unique<LiveBackend>(live_rest.substr(0, comma2),
                                               live_rest.substr(comma2 + 1)));
    }
    throw ConfigError("unknown backend kind '" + kind + "'");
}

}  // namespace curricullm
