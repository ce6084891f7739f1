#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnd/tensor.hpp"

namespace attnd {

/// Versioned binary container for named float64 tensors, used by
/// checkpoints and dataset feature codes.
///
/// Layout, all integers little-endian:
///   "ATTD" | version u32 | meta_len u32 | meta JSON (UTF-8) |
///   n_tensors u32 | repeated { name_len u32 | name | rank u32 |
///   dims u32[rank] | payload f64[numel] }
/// Tensors are written sorted by name, so identical contents produce
/// identical bytes.
struct TensorContainer {
    static constexpr uint32_t kVersion = 1;

    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;
};

void save_container(const TensorContainer& c, const std::string& path);
TensorContainer load_container(const std::string& path);

// Small file helpers shared by dataset and checkpoint code.
std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, size_t size);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);
uint32_t crc32_of(const void* data, size_t size);
uint32_t crc32_of_file(const std::string& path);

}  // namespace attnd
