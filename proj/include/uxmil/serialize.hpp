#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "uxmil/params.hpp"

namespace uxmil {

// Weight file: magic "UXMIL1", version u32 LE, then per-parameter records:
//   name_len u32 LE, UTF-8 name, rank u32 LE, dims u64 LE each, f32 values LE.
// Records run until EOF. Values are stored as f32 regardless of the compute
// scalar type.
inline constexpr char kWeightMagic[6] = {'U', 'X', 'M', 'I', 'L', '1'};
inline constexpr uint32_t kWeightVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw IoError("weight file truncated while reading " + what);
    return v;
}

}  // namespace detail

template <class S>
void save_weights(const std::string& path, const ParamList<S>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open weight file for writing: " + path);
    os.write(kWeightMagic, sizeof(kWeightMagic));
    detail::write_pod<uint32_t>(os, kWeightVersion);
    for (const auto& p : params) {
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) detail::write_pod<uint64_t>(os, d);
        for (std::size_t i = 0; i < p.value.numel(); ++i)
            detail::write_pod<float>(os, static_cast<float>(p.value.at(i)));
    }
    if (!os) throw IoError("write failure on weight file: " + path);
}

struct WeightRecord {
    Shape shape;
    std::vector<float> values;
};

inline std::map<std::string, WeightRecord> read_weight_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open weight file: " + path);
    char magic[6];
    if (!is.read(magic, 6) || std::memcmp(magic, kWeightMagic, 6) != 0)
        throw ValidationError("not a weight file (bad magic): " + path);
    const auto version = detail::read_pod<uint32_t>(is, "version");
    if (version != kWeightVersion)
        throw ValidationError("unsupported weight file version " + std::to_string(version));
    std::map<std::string, WeightRecord> records;
    while (true) {
        uint32_t name_len = 0;
        if (!is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len))) break;  // EOF
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw IoError("weight file truncated: name");
        const auto rank = detail::read_pod<uint32_t>(is, "rank of " + name);
        WeightRecord rec;
        std::size_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const auto d = detail::read_pod<uint64_t>(is, "dims of " + name);
            rec.shape.push_back(static_cast<std::size_t>(d));
            numel *= static_cast<std::size_t>(d);
        }
        rec.values.resize(numel);
        if (numel &&
            !is.read(reinterpret_cast<char*>(rec.values.data()),
                     static_cast<std::streamsize>(numel * sizeof(float))))
            throw IoError("weight file truncated: values of " + name);
        if (!records.emplace(name, std::move(rec)).second)
            throw ValidationError("duplicate parameter in weight file: " + name);
    }
    return records;
}

// Loads a weight file into an existing parameter list. Every parameter must
// be present with a matching shape, and the file may not carry extras.
template <class S>
void load_weights(const std::string& path, ParamList<S>& params) {
    auto records = read_weight_file(path);
    for (auto& p : params) {
        auto it = records.find(p.name);
        if (it == records.end())
            throw ValidationError("weight file missing parameter: " + p.name);
        if (it->second.shape != p.value.shape())
            throw ShapeError("weight shape mismatch for " + p.name + ": file " +
                             shape_str(it->second.shape) + " vs model " +
                             shape_str(p.value.shape()));
        for (std::size_t i = 0; i < p.value.numel(); ++i)
            p.value.data()[i] = static_cast<S>(it->second.values[i]);
        records.erase(it);
    }
    if (!records.empty())
        throw ValidationError("weight file has unexpected parameter: " +
                              records.begin()->first);
}

}  // namespace uxmil
