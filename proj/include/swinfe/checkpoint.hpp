#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "swinfe/optim.hpp"
#include "swinfe/params.hpp"

// Checkpoint file, little-endian:
//   "SWFE" | u32 version (1) | u32 tensor count |
//   per tensor, names in lexicographic order:
//     u16 name length | name bytes (UTF-8) | u8 dtype (0 = f32, 1 = f64) |
//     u8 rank | rank x u32 dims | raw element data
//
// Parameters keep their own names. Optimizer state is stored as
// "adamw.step" (f64, [1]) and "adamw.m.<param>" / "adamw.v.<param>".

namespace swinfe {

inline constexpr char kCheckpointMagic[4] = {'S', 'W', 'F', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

struct StoredTensor {
    DType dtype = DType::f32;
    Shape shape;
    std::vector<double> values;  // widened; exact for both dtypes
};

using Checkpoint = std::map<std::string, StoredTensor>;

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    std::uint64_t le(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CheckpointError("corrupt checkpoint: truncated at byte " + std::to_string(pos_));
    }
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    std::string out(kCheckpointMagic, 4);
    detail::put_le(out, kCheckpointVersion, 4);
    detail::put_le(out, ck.size(), 4);
    for (const auto& [name, t] : ck) {
        if (name.size() > 0xffff) throw CheckpointError("tensor name too long: " + name.substr(0, 32) + "...");
        if (t.shape.size() > 0xff) throw CheckpointError("tensor rank too large: " + name);
        if (t.values.size() != shape_numel(t.shape)) throw CheckpointError("tensor size/shape mismatch: " + name);
        detail::put_le(out, name.size(), 2);
        out += name;
        out.push_back(static_cast<char>(t.dtype));
        out.push_back(static_cast<char>(t.shape.size()));
        for (auto d : t.shape) detail::put_le(out, d, 4);
        for (double v : t.values) {
            if (t.dtype == DType::f32) {
                const float f = static_cast<float>(v);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                detail::put_le(out, bits, 4);
            } else {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                detail::put_le(out, bits, 8);
            }
        }
    }
    return out;
}

inline Checkpoint parse_checkpoint(std::string data) {
    detail::Reader r(std::move(data));
    if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("corrupt checkpoint: bad magic");
    const auto version = r.le(4);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto count = r.le(4);
    Checkpoint ck;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = r.le(2);
        std::string name = r.bytes(len);
        StoredTensor t;
        const auto code = r.le(1);
        if (code > 1) throw CheckpointError("corrupt checkpoint: unknown dtype code " + std::to_string(code) + " for " + name);
        t.dtype = static_cast<DType>(code);
        const auto rank = r.le(1);
        for (std::uint64_t d = 0; d < rank; ++d) t.shape.push_back(r.le(4));
        const std::size_t n = shape_numel(t.shape);
        t.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            if (t.dtype == DType::f32) {
                const auto bits = static_cast<std::uint32_t>(r.le(4));
                float f;
                std::memcpy(&f, &bits, 4);
                t.values[k] = f;
            } else {
                const std::uint64_t bits = r.le(8);
                std::memcpy(&t.values[k], &bits, 8);
            }
        }
        if (!ck.emplace(std::move(name), std::move(t)).second) throw CheckpointError("corrupt checkpoint: duplicate tensor name");
    }
    if (!r.done()) throw CheckpointError("corrupt checkpoint: trailing bytes");
    return ck;
}

inline void write_checkpoint_file(const Checkpoint& ck, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(ck);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot open " + tmp.string() + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw CheckpointError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_checkpoint(std::move(data));
}

template <typename T>
Checkpoint make_checkpoint(const ParamSet<T>& params, const AdamW<T>* opt) {
    Checkpoint ck;
    auto store = [&ck](const std::string& name, const Shape& shape, auto values) {
        StoredTensor t;
        t.dtype = dtype_of<T>();
        t.shape = shape;
        t.values.assign(values.begin(), values.end());
        ck.emplace(name, std::move(t));
    };
    for (const auto& [name, t] : params) store(name, t.shape(), t.data());
    if (opt) {
        StoredTensor st;
        st.dtype = DType::f64;
        st.shape = {1};
        st.values = {static_cast<double>(opt->step_count())};
        ck.emplace("adamw.step", std::move(st));
        for (const auto& [name, mo] : opt->moments()) {
            const Shape shape = params.get(name).shape();
            store("adamw.m." + name, shape, std::span<const T>(mo.m));
            store("adamw.v." + name, shape, std::span<const T>(mo.v));
        }
    }
    return ck;
}

/// Validates the whole checkpoint against `params` (and `opt`) before
/// touching anything: every stored name must be known, dtypes and shapes
/// must match, and every parameter must be present.
template <typename T>
void apply_checkpoint(const Checkpoint& ck, ParamSet<T>& params, AdamW<T>* opt) {
    std::vector<std::string> unknown;
    for (const auto& [name, t] : ck) {
        std::string pname = name;
        if (name == "adamw.step") continue;
        if (name.rfind("adamw.m.", 0) == 0 || name.rfind("adamw.v.", 0) == 0) pname = name.substr(8);
        if (!params.contains(pname)) unknown.push_back(name);
    }
    if (!unknown.empty()) {
        std::string msg = "checkpoint contains unknown tensors:";
        for (const auto& n : unknown) msg += " " + n;
        throw CheckpointError(msg);
    }
    for (const auto& [name, t] : ck) {
        if (name == "adamw.step") continue;
        std::string pname = name.rfind("adamw.", 0) == 0 ? name.substr(8) : name;
        const Shape& want = params.get(pname).shape();
        if (t.shape != want) {
            throw CheckpointError("checkpoint shape mismatch for '" + name + "': stored " + shape_str(t.shape) +
                                  ", model expects " + shape_str(want));
        }
        if (t.dtype != dtype_of<T>()) throw CheckpointError("checkpoint dtype mismatch for '" + name + "'");
    }
    for (const auto& [name, _] : params) {
        if (!ck.count(name)) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
    }
    for (const auto& [name, tensor] : params) {
        Tensor<T> t = tensor;
        const auto& src = ck.at(name).values;
        auto dst = t.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
    }
    if (opt) {
        auto it = ck.find("adamw.step");
        opt->moments().clear();
        opt->set_step_count(it == ck.end() ? 0 : static_cast<std::uint64_t>(it->second.values.at(0)));
        for (const auto& [name, tensor] : params) {
            auto m = ck.find("adamw.m." + name);
            auto v = ck.find("adamw.v." + name);
            auto& mo = opt->moments()[name];
            mo.m.assign(tensor.numel(), T(0));
            mo.v.assign(tensor.numel(), T(0));
            if (m != ck.end()) {
                for (std::size_t i = 0; i < mo.m.size(); ++i) mo.m[i] = static_cast<T>(m->second.values[i]);
            }
            if (v != ck.end()) {
                for (std::size_t i = 0; i < mo.v.size(); ++i) mo.v[i] = static_cast<T>(v->second.values[i]);
            }
        }
    }
}

template <typename T>
void save_checkpoint(const ParamSet<T>& params, const AdamW<T>* opt, const std::filesystem::path& path) {
    write_checkpoint_file(make_checkpoint(params, opt), path);
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamSet<T>& params, AdamW<T>* opt) {
    apply_checkpoint(read_checkpoint_file(path), params, opt);
}

}  // namespace swinfe
