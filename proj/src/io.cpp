// SPDX-License-Identifier: Apache-2.0
#include "qmimo/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "container payload is little-endian f64");

namespace qmimo::io {

namespace {

constexpr std::array<char, 8> kMagic{'Q', 'M', 'I', 'M', 'O', 'A', 'R', 'R'};

std::string_view as_bytes(const Tensor& t) {
    return {reinterpret_cast<const char*>(t.ptr()), static_cast<std::size_t>(t.size()) * sizeof(double)};
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash) {
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

void ArrayContainer::put(const std::string& name, const Tensor& t) { arrays_[name] = Entry{"float64", t}; }

void ArrayContainer::put_complex(const std::string& name, const BasicTensor<std::complex<double>>& t) {
    Shape shape = t.shape();
    shape.push_back(2);
    Tensor flat(shape);
    for (Index i = 0; i < t.size(); ++i) {
        flat[2 * i] = t[i].real();
        flat[2 * i + 1] = t[i].imag();
    }
    arrays_[name] = Entry{"complex128", std::move(flat)};
}

const Tensor& ArrayContainer::get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw FormatError("container has no array named '" + name + "'");
    if (it->second.dtype != "float64") throw FormatError("array '" + name + "' is not float64");
    return it->second.data;
}

BasicTensor<std::complex<double>> ArrayContainer::get_complex(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw FormatError("container has no array named '" + name + "'");
    if (it->second.dtype != "complex128") throw FormatError("array '" + name + "' is not complex128");
    const Tensor& flat = it->second.data;
    Shape shape(flat.shape().begin(), flat.shape().end() - 1);
    BasicTensor<std::complex<double>> out(shape);
    for (Index i = 0; i < out.size(); ++i) out[i] = {flat[2 * i], flat[2 * i + 1]};
    return out;
}

std::vector<std::string> ArrayContainer::names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : arrays_) out.push_back(name);
    return out;
}

void ArrayContainer::save(const std::string& path) const {
    nlohmann::json header;
    header["version"] = kContainerVersion;
    header["kind"] = kind;
    header["meta"] = meta;
    header["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const auto& [name, e] : arrays_) {
        header["arrays"].push_back({{"name", name},
                                    {"dtype", e.dtype},
                                    {"shape", e.data.shape()},
                                    {"offset", offset},
                                    {"count", e.data.size()}});
        offset += static_cast<std::uint64_t>(e.data.size());
        hash = fnv1a64(as_bytes(e.data), hash);
    }
    hash = fnv1a64(header.dump(), hash);
    header["checksum"] = "fnv1a64:" + hex64(hash);
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    const std::uint32_t version = kContainerVersion;
    const std::uint64_t header_len = text.size();
    out.write(kMagic.data(), kMagic.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, e] : arrays_) {
        const auto bytes = as_bytes(e.data);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

ArrayContainer ArrayContainer::load(const std::string& path, std::string_view expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::array<char, 8> magic{};
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic.data(), magic.size());
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (!in || magic != kMagic) throw FormatError("'" + path + "' is not an array container");
    if (version != kContainerVersion)
        throw FormatError("container version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kContainerVersion) + ")");
    if (header_len > (1ULL << 32)) throw FormatError("corrupt container header length");

    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw FormatError("truncated container header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt container header: ") + e.what());
    }
    if (header.value("version", 0u) != kContainerVersion) throw FormatError("header version mismatch");

    ArrayContainer c;
    c.kind = header.value("kind", "");
    if (!expected_kind.empty() && c.kind != expected_kind)
        throw FormatError("expected a '" + std::string(expected_kind) + "' container, found '" + c.kind + "'");
    c.meta = header.value("meta", nlohmann::json::object());

    const std::string checksum = header.value("checksum", "");
    header.erase("checksum");
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const auto& a : header.at("arrays")) {
        Shape shape = a.at("shape").get<Shape>();
        const auto count = a.at("count").get<Index>();
        if (numel(shape) != count) throw FormatError("array shape/count mismatch in header");
        Tensor data(std::move(shape));
        in.read(reinterpret_cast<char*>(data.ptr()), static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw FormatError("truncated container payload");
        hash = fnv1a64(as_bytes(data), hash);
        c.arrays_[a.at("name").get<std::string>()] = Entry{a.at("dtype").get<std::string>(), std::move(data)};
    }
    hash = fnv1a64(header.dump(), hash);
    if (checksum != "fnv1a64:" + hex64(hash)) throw FormatError("checksum mismatch in '" + path + "'");
    return c;
}

}  // namespace qmimo::io
