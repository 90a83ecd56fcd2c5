#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tts/tensor.hpp"

namespace tts::params {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct Entry {
    ad::TensorPtr tensor;
    DType dtype = DType::f64;
};

/// Ordered, named tensor collection with trainability flags plus a JSON
/// metadata block. The unit of checkpointing, surgery and freezing.
/// Trainability lives on the tensors (requires_grad); the serialized form
/// records non-trainable names in metadata.
class ParameterArchive {
public:
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

    void put(const std::string& name, ad::TensorPtr tensor, DType dtype = DType::f64);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const ad::TensorPtr& at(const std::string& name) const;
    ad::TensorPtr& at(const std::string& name);
    DType dtype_of(const std::string& name) const;

    const std::vector<std::string>& order() const { return order_; }
    std::size_t size() const { return order_.size(); }

    /// Names matching a prefix, in archive order.
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    /// Deep copy (tensor values duplicated, flags preserved).
    ParameterArchive clone() const;

    /// All tensors with requires_grad set, in archive order.
    std::vector<ad::TensorPtr> trainable() const;

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Entry> index_;
};

// Binary form: magic "TTSF", u32 version, length-prefixed UTF-8 JSON
// metadata, then per-tensor records (u32 name length + bytes, u8 dtype,
// u8 rank, u32 extents, little-endian payload) until end of file.
std::string archive_bytes(const ParameterArchive& a);
ParameterArchive archive_from_bytes(const std::string& bytes);
void save_archive(const ParameterArchive& a, const std::string& path); // atomic replace
ParameterArchive load_archive(const std::string& path);

/// Content fingerprint over stage metadata and all tensor payloads.
std::uint64_t archive_content_id(const ParameterArchive& a);

/// Bytewise equality of one tensor's payload between two archives.
bool tensor_bytes_equal(const ParameterArchive& a, const ParameterArchive& b,
                        const std::string& name);

} // namespace tts::params
