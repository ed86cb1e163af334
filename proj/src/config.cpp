#include "ehrisk/config.hpp"

#include "ehrisk/errors.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <string_view>

namespace ehrisk {

namespace {

constexpr std::array<std::string_view, 9> kKeys{ "listen", "checkpoint", "store", "user", "pass", "workers", "queue_depth", "session_ttl", "explain_permutations" };

std::string env_name(std::string_view key) {
    std::string name = "EHRISK_";
    for (const char c : key) {
        name.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return name;
}

long long positive(const KeyValues &kv, std::string_view key, long long fallback) {
    const long long v = kv.get_int(key, fallback);
    if (v <= 0) {
        throw ConfigError(std::string(key) + " must be positive");
    }
    return v;
}

}  // namespace

void ServiceConfig::validate() const {
    if (user.empty() || pass.empty()) {
        throw ConfigError("user and pass must both be set");
    }
    if (port < 0 || port > 65535) {
        throw ConfigError("port out of range: " + std::to_string(port));
    }
    if (workers == 0 || workers > 64) {
        throw ConfigError("workers must be in 1..64");
    }
    if (queue_depth == 0) {
        throw ConfigError("queue_depth must be positive");
    }
    if (session_ttl_seconds <= 0) {
        throw ConfigError("session_ttl must be positive");
    }
}

std::optional<std::string> process_env(const std::string &name) {
    if (const char *v = std::getenv(name.c_str())) {
        return std::string(v);
    }
    return std::nullopt;
}

ServiceConfig service_config_from(const KeyValues &values, const EnvLookup &env) {
    KeyValues kv;
    for (const auto &[key, value] : values.entries()) {
        if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
            throw ConfigError("unknown configuration key '" + key + "'");
        }
        kv.set(key, value);
    }
    for (const std::string_view key : kKeys) {
        if (auto v = env(env_name(key))) {
            kv.set(std::string(key), *v);
        }
    }

    ServiceConfig c;
    if (auto listen = kv.get("listen")) {
        const auto colon = listen->rfind(':');
        if (colon == std::string::npos) {
            throw ConfigError("listen must be host:port, got '" + *listen + "'");
        }
        c.host = listen->substr(0, colon);
        KeyValues port;
        port.set("port", listen->substr(colon + 1));
        c.port = static_cast<int>(port.get_int("port", 0));
    }
    c.checkpoint = kv.get_string("checkpoint", c.checkpoint.string());
    c.store = kv.get_string("store", c.store.string());
    c.user = kv.get_string("user", c.user);
    c.pass = kv.get_string("pass", c.pass);
    c.workers = static_cast<std::size_t>(positive(kv, "workers", static_cast<long long>(c.workers)));
    c.queue_depth = static_cast<std::size_t>(positive(kv, "queue_depth", static_cast<long long>(c.queue_depth)));
    c.session_ttl_seconds = static_cast<int>(positive(kv, "session_ttl", c.session_ttl_seconds));
    c.explain_permutations = static_cast<std::size_t>(positive(kv, "explain_permutations", static_cast<long long>(c.explain_permutations)));
    c.validate();
    return c;
}

ServiceConfig load_service_config(const std::filesystem::path &path, const EnvLookup &env) {
    return service_config_from(KeyValues::read(path), env);
}

}  // namespace ehrisk
