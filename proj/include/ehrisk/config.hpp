#pragma once

#include "ehrisk/kv_file.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace ehrisk {

/// Settings of the HTTP service.
///
/// File keys (key = value):  listen, checkpoint, store, user, pass, workers,
/// queue_depth, session_ttl, explain_permutations.
/// Each can be overridden by an environment variable EHRISK_<KEY in upper case>.
struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path checkpoint = "model.ckpt";
    std::filesystem::path store = "store";
    std::string user = "clinician";
    std::string pass;
    std::size_t workers = 1;
    std::size_t queue_depth = 256;
    int session_ttl_seconds = 3600;
    std::size_t explain_permutations = 256;

    /// Throws ConfigError on empty credentials or out-of-range sizes.
    void validate() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string &name)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string &name);

/// Applies `values` then environment overrides on top of the defaults.
/// Throws ConfigError for unknown keys or malformed values.
ServiceConfig service_config_from(const KeyValues &values, const EnvLookup &env = process_env);
ServiceConfig load_service_config(const std::filesystem::path &path, const EnvLookup &env = process_env);

}  // namespace ehrisk
