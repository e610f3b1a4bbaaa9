#pragma once

#include <stdexcept>
#include <string>

namespace curricullm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// configuration / input validation
struct ConfigError : Error {
    using Error::Error;
};

struct InvalidGoalSpec : ConfigError {
    using ConfigError::ConfigError;
};

struct UnknownEnvironment : ConfigError {
    using ConfigError::ConfigError;
};

// LLM backend transport and fixtures
struct BackendError : Error {
    using Error::Error;
};

struct TransportError : BackendError {
    using BackendError::BackendError;
};

struct NonSuccessStatus : BackendError {
    int status;
    explicit NonSuccessStatus(int code)
        : BackendError("backend returned HTTP status " + std::to_string(code)), status(code) {}
};

struct FixtureExhausted : BackendError {
    using BackendError::BackendError;
};

struct FixtureKeyMissing : BackendError {
    using BackendError::BackendError;
};

// pipeline-level failures
struct PipelineError : Error {
    using Error::Error;
};

struct CurriculumParseFailure : PipelineError {
    using PipelineError::PipelineError;
};

struct AllCandidatesFailed : PipelineError {
    int subtask;
    explicit AllCandidatesFailed(int subtask_index)
        : PipelineError("every task-code candidate failed for subtask " + std::to_string(subtask_index)),
          subtask(subtask_index) {}
};

struct CorruptRunDirectory : PipelineError {
    using PipelineError::PipelineError;
};

struct ConfigMismatch : PipelineError {
    using PipelineError::PipelineError;
};

struct TaskCodeRuntimeFault : PipelineError {
    using PipelineError::PipelineError;
};

}  // namespace curricullm
