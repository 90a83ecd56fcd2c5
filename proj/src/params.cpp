#include "tts/params.hpp"

#include <cstring>
#include <stdexcept>

#include "tts/common.hpp"

namespace tts::params {

void ParameterArchive::put(const std::string& name, ad::TensorPtr tensor, DType dtype) {
    if (index_.count(name)) {
        throw std::invalid_argument("parameter archive already holds '" + name + "'");
    }
    tensor->name = name;
    order_.push_back(name);
    index_[name] = Entry{std::move(tensor), dtype};
}

const ad::TensorPtr& ParameterArchive::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::invalid_argument("parameter archive has no entry '" + name + "'");
    }
    return it->second.tensor;
}

ad::TensorPtr& ParameterArchive::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::invalid_argument("parameter archive has no entry '" + name + "'");
    }
    return it->second.tensor;
}

DType ParameterArchive::dtype_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::invalid_argument("parameter archive has no entry '" + name + "'");
    }
    return it->second.dtype;
}

std::vector<std::string> ParameterArchive::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& n : order_) {
        if (n.rfind(prefix, 0) == 0) {
            out.push_back(n);
        }
    }
    return out;
}

ParameterArchive ParameterArchive::clone() const {
    ParameterArchive copy;
    copy.metadata = metadata;
    for (const auto& n : order_) {
        const Entry& e = index_.at(n);
        auto t = ad::make_tensor(e.tensor->shape, e.tensor->value, e.tensor->requires_grad);
        copy.put(n, std::move(t), e.dtype);
    }
    return copy;
}

std::vector<ad::TensorPtr> ParameterArchive::trainable() const {
    std::vector<ad::TensorPtr> out;
    for (const auto& n : order_) {
        const auto& t = index_.at(n).tensor;
        if (t->requires_grad) {
            out.push_back(t);
        }
    }
    return out;
}

std::string archive_bytes(const ParameterArchive& a) {
    // non-trainable flags ride in the metadata block
    nlohmann::ordered_json meta = a.metadata;
    nlohmann::ordered_json frozen = nlohmann::ordered_json::array();
    for (const auto& n : a.order()) {
        if (!a.at(n)->requires_grad) {
            frozen.push_back(n);
        }
    }
    meta["non_trainable"] = frozen;
    const std::string meta_str = meta.dump();

    std::string out;
    out += "TTSF";
    put_u32(out, 1); // version
    put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;
    for (const auto& n : a.order()) {
        const auto& t = a.at(n);
        const DType dt = a.dtype_of(n);
        put_u32(out, static_cast<std::uint32_t>(n.size()));
        out += n;
        put_u8(out, static_cast<std::uint8_t>(dt));
        put_u8(out, static_cast<std::uint8_t>(t->shape.size()));
        for (auto e : t->shape) {
            put_u32(out, static_cast<std::uint32_t>(e));
        }
        if (dt == DType::f64) {
            for (double v : t->value) {
                put_f64(out, v);
            }
        } else {
            for (double v : t->value) {
                put_f32(out, static_cast<float>(v));
            }
        }
    }
    return out;
}

ParameterArchive archive_from_bytes(const std::string& bytes) {
    ByteReader r(bytes.data(), bytes.size());
    if (r.bytes(4) != "TTSF") {
        throw DataError("bad checkpoint magic (expected TTSF)");
    }
    const std::uint32_t version = r.u32();
    if (version != 1) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t meta_len = r.u32();
    const std::string meta_str = r.bytes(meta_len);
    ParameterArchive a;
    try {
        a.metadata = nlohmann::ordered_json::parse(meta_str);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    while (!r.eof()) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const auto dt = static_cast<DType>(r.u8());
        if (dt != DType::f32 && dt != DType::f64) {
            throw DataError("unknown dtype code for tensor '" + name + "'");
        }
        const std::uint8_t rank = r.u8();
        ad::Shape shape(rank);
        std::int64_t n = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            shape[i] = r.u32();
            n *= shape[i];
        }
        std::vector<double> values(static_cast<std::size_t>(n));
        if (dt == DType::f64) {
            for (auto& v : values) {
                v = r.f64();
            }
        } else {
            for (auto& v : values) {
                v = static_cast<double>(r.f32());
            }
        }
        a.put(name, ad::make_tensor(std::move(shape), std::move(values), true), dt);
    }
    if (a.metadata.contains("non_trainable")) {
        for (const auto& n : a.metadata["non_trainable"]) {
            const std::string name = n.get<std::string>();
            if (!a.has(name)) {
                throw DataError("non_trainable metadata names unknown tensor '" + name + "'");
            }
            a.at(name)->requires_grad = false;
        }
        a.metadata.erase("non_trainable");
    }
    return a;
}

void save_archive(const ParameterArchive& a, const std::string& path) {
    write_file_atomic(path, archive_bytes(a));
}

ParameterArchive load_archive(const std::string& path) {
    return archive_from_bytes(read_file(path));
}

std::uint64_t archive_content_id(const ParameterArchive& a) {
    std::uint64_t h = fnv1a64("ttsf-content");
    if (a.metadata.contains("stage")) {
        h = fnv1a64(a.metadata["stage"].dump(), h);
    }
    if (a.metadata.contains("steps")) {
        h = fnv1a64(a.metadata["steps"].dump(), h);
    }
    if (a.metadata.contains("seed")) {
        h = fnv1a64(a.metadata["seed"].dump(), h);
    }
    for (const auto& n : a.order()) {
        h = fnv1a64(n, h);
        const auto& v = a.at(n)->value;
        h = fnv1a64(v.data(), v.size() * sizeof(double), h);
    }
    return h;
}

bool tensor_bytes_equal(const ParameterArchive& a, const ParameterArchive& b,
                        const std::string& name) {
    const auto& ta = a.at(name);
    const auto& tb = b.at(name);
    if (ta->shape != tb->shape || ta->value.size() != tb->value.size()) {
        return false;
    }
    return std::memcmp(ta->value.data(), tb->value.data(), ta->value.size() * sizeof(double)) == 0;
}

} // namespace tts::params
