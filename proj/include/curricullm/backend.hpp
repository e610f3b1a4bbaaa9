#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "curricullm/errors.hpp"

namespace curricullm {

enum class Role { system, user };

struct ChatMessage {
    Role role;
    std::string content;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
    int candidate_count = 1;
};

// Identifies one backend call within a pipeline run; scripted and replay
// backends key their fixtures by it. `attempt` counts calls made for the
// same (stage, subtask) pair, in order.
struct CallKey {
    std::string stage;  // curriculum | task_code | evaluation
    int subtask = 0;    // 0 for the curriculum stage and for zeroshot queries
    int attempt = 0;

    std::string to_string() const;
};

// Chat-completion backend. Calls are serialized through an internal mutex;
// everything else is immutable after construction.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    std::string complete(const ChatRequest& request, const CallKey& key);

    virtual bool is_live() const { return false; }
    int call_count() const { return call_count_; }

protected:
    virtual std::string complete_locked(const ChatRequest& request, const CallKey& key) = 0;

private:
    std::mutex mutex_;
    int call_count_ = 0;
};

// Live OpenAI-compatible backend: POST {base_url}/v1/chat/completions with a
// bearer token from CURRICULLM_API_KEY.
class LiveBackend : public ChatBackend {
public:
    LiveBackend(std::string base_url, std::string model);
    bool is_live() const override { return true; }
    const std::string& model() const { return model_; }

protected:
    std::string complete_locked(const ChatRequest& request, const CallKey& key) override;

private:
    std::string base_url_;
    std::string model_;
};

// Fixture-driven backend: a JSON document mapping "stage:subtask" to an
// ordered list of response strings, indexed by attempt.
class ScriptedBackend : public ChatBackend {
public:
    explicit ScriptedBackend(const std::string& fixture_path);
    static std::unique_ptr<ScriptedBackend> from_text(const std::string& json_text);

protected:
    std::string complete_locked(const ChatRequest& request, const CallKey& key) override;

private:
    ScriptedBackend() = default;
    std::map<std::string, std::vector<std::string>> responses_;
};

// Record-replay wrapper: answers from the cache in `dir` when the key is
// present, otherwise forwards to the live backend and persists the response.
class ReplayBackend : public ChatBackend {
public:
    ReplayBackend(std::string dir, std::unique_ptr<ChatBackend> live);
    int network_calls() const { return network_calls_; }

protected:
    std::string complete_locked(const ChatRequest& request, const CallKey& key) override;

private:
    void load();
    void save() const;

    std::string dir_;
    std::unique_ptr<ChatBackend> live_;
    std::map<std::string, std::string> cache_;
    int network_calls_ = 0;
};

// Parses a --backend spec: live:<url>,<model> | scripted:<fixture-path> |
// replay:<dir>[,<url>,<model>]
std::unique_ptr<ChatBackend> make_backend(const std::string& spec);

inline constexpr const char* kApiKeyEnvVar = "CURRICULLM_API_KEY";

}  // namespace curricullm
