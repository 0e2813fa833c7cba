#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "panoseg/tensor.hpp"

namespace panoseg {

static_assert(std::endian::native == std::endian::little,
              "parameter buffers are written little-endian; big-endian hosts are unsupported");

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>)
        return "float32";
    else
        return "float64";
}

/// Named map of trainable tensors. Iteration order is lexicographic in the
/// parameter path, which serialization and the optimizer both rely on.
template <typename T>
class ParamSet {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> tensor) {
        require(params_.find(name) == params_.end(), "duplicate parameter name: " + name);
        tensor.set_requires_grad(true);
        auto [it, ok] = params_.emplace(name, std::move(tensor));
        (void)ok;
        return it->second;
    }

    Tensor<T>& get(const std::string& name) {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter: " + name);
        return it->second;
    }

    const Tensor<T>& get(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter: " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    size_t size() const { return params_.size(); }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    /// Writes <json_path> with the tensor manifest plus caller payload under
    /// "extra", and <bin_path> with one contiguous little-endian buffer.
    void save(const std::filesystem::path& json_path, const std::filesystem::path& bin_path,
              const nlohmann::json& extra = nlohmann::json::object()) const {
        nlohmann::json manifest;
        manifest["format"] = "panoseg-params-v1";
        manifest["dtype"] = dtype_name<T>();
        manifest["buffer"] = bin_path.filename().string();
        nlohmann::json tensors = nlohmann::json::array();
        std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
        if (!bin) throw DataError("cannot write " + bin_path.string());
        std::int64_t offset = 0;
        for (const auto& [name, t] : params_) {
            nlohmann::json entry;
            entry["name"] = name;
            entry["shape"] = t.shape();
            entry["dtype"] = dtype_name<T>();
            entry["byte_offset"] = offset;
            tensors.push_back(entry);
            bin.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(sizeof(T) * t.numel()));
            offset += static_cast<std::int64_t>(sizeof(T)) * t.numel();
        }
        bin.close();
        manifest["tensors"] = std::move(tensors);
        manifest["extra"] = extra;
        std::ofstream js(json_path, std::ios::trunc);
        if (!js) throw DataError("cannot write " + json_path.string());
        js << manifest.dump(2) << '\n';
    }

    static ParamSet load(const std::filesystem::path& json_path,
                         const std::filesystem::path& bin_path,
                         nlohmann::json* extra_out = nullptr) {
        std::ifstream js(json_path);
        if (!js) throw DataError("cannot read " + json_path.string());
        nlohmann::json manifest = nlohmann::json::parse(js);
        if (manifest.value("format", "") != "panoseg-params-v1")
            throw DataError(json_path.string() + ": not a panoseg-params-v1 manifest");
        if (manifest.value("dtype", "") != dtype_name<T>())
            throw DataError(json_path.string() + ": dtype " +
                            manifest.value("dtype", std::string("?")) + " does not match " +
                            dtype_name<T>());
        std::ifstream bin(bin_path, std::ios::binary);
        if (!bin) throw DataError("cannot read " + bin_path.string());

        ParamSet out;
        for (const auto& entry : manifest.at("tensors")) {
            const std::string name = entry.at("name").get<std::string>();
            const Shape shape = entry.at("shape").get<Shape>();
            const std::int64_t offset = entry.at("byte_offset").get<std::int64_t>();
            std::vector<T> values(static_cast<size_t>(numel(shape)));
            bin.seekg(offset);
            bin.read(reinterpret_cast<char*>(values.data()),
                     static_cast<std::streamsize>(sizeof(T) * values.size()));
            if (!bin) throw DataError(bin_path.string() + ": truncated buffer at " + name);
            out.add(name, Tensor<T>::from(shape, std::move(values)));
        }
        if (extra_out) *extra_out = manifest.value("extra", nlohmann::json::object());
        return out;
    }

private:
    std::map<std::string, Tensor<T>> params_;
};

}  // namespace panoseg
