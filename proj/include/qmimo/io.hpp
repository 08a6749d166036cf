// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/tensor.hpp"

#include <nlohmann/json.hpp>

#include <complex>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qmimo::io {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kContainerVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Self-describing array container:
//   "QMIMOARR" | u32 version | u64 header bytes | JSON header | f64 payload
// The header lists every array (name, dtype, shape, offset, count) plus free
// metadata, and carries an FNV-1a checksum over header and payload.
class ArrayContainer {
public:
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();

    void put(const std::string& name, const Tensor& t);
    void put_complex(const std::string& name, const BasicTensor<std::complex<double>>& t);

    bool has(const std::string& name) const { return arrays_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    BasicTensor<std::complex<double>> get_complex(const std::string& name) const;
    std::vector<std::string> names() const;

    void save(const std::string& path) const;
    static ArrayContainer load(const std::string& path, std::string_view expected_kind = {});

private:
    struct Entry {
        std::string dtype;
        Tensor data;  // complex arrays are stored interleaved with a trailing dim of 2
    };
    std::map<std::string, Entry> arrays_;
};

}  // namespace qmimo::io
