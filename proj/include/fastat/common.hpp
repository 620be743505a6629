#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fastat {

// L-infinity threat model. Epsilon and step sizes live in raw pixel units,
// i.e. the same [data_min, data_max] scale the images use.
struct ThreatModel {
    std::string norm = "linf";
    double epsilon = 8.0 / 255.0;
    double eval_step = 2.0 / 255.0;
    double data_min = 0.0;
    double data_max = 1.0;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AttackError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A single validation finding; `key` names the offending config entry.
struct Violation {
    std::string key;
    std::string message;
};

// 64-bit FNV-1a over a byte string.
uint64_t fnv1a(const std::string& bytes);

// splitmix64 step; used to derive independent per-(seed,epoch,index) streams.
uint64_t splitmix64(uint64_t& state);

// Combines components into one stream seed (order-sensitive).
uint64_t mix_seed(std::initializer_list<uint64_t> parts);

std::string to_hex(uint64_t v);

}  // namespace fastat
