#pragma once

// Binary checkpoint:
//   magic "ORACKPT\0" (8 bytes), u32 version, u32 entry count, then per entry
//   u32 name length, name bytes, u32 rank, rank x u32 dims, float32 data.
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ora/autodiff.hpp"
#include "ora/util.hpp"

namespace ora {

inline constexpr char kCheckpointMagic[8] = {'O', 'R', 'A', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class Real>
struct NamedTensor {
    std::string name;
    ad::Tensor<Real> tensor;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    bool done() const noexcept { return pos_ == data_.size(); }
    size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > data_.size()) throw ParseError("checkpoint: truncated data");
    }
    std::string_view data_;
    size_t pos_ = 0;
};

}  // namespace detail

template <class Real>
std::string serialize_checkpoint(const std::vector<NamedTensor<Real>>& entries) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        detail::put_u32(out, static_cast<std::uint32_t>(e.tensor.shape.size()));
        for (size_t d : e.tensor.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (Real x : e.tensor.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
    return out;
}

template <class Real>
std::vector<NamedTensor<Real>> parse_checkpoint(std::string_view data) {
    detail::ByteReader r(data);
    if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
        throw ParseError("checkpoint: bad magic");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = r.u32();
    std::vector<NamedTensor<Real>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor<Real> e;
        e.name = r.bytes(r.u32());
        const auto rank = r.u32();
        if (rank == 0 || rank > 3) throw ParseError("checkpoint: entry '" + e.name + "' has invalid rank");
        ad::Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32());
        size_t n = 1;
        for (size_t d : shape) {
            if (d && n > r.remaining() / 4 / d) throw ParseError("checkpoint: truncated data");
            n *= d;
        }
        if (n * 4 > r.remaining()) throw ParseError("checkpoint: truncated data");
        std::vector<Real> values(n);
        for (auto& x : values) x = static_cast<Real>(std::bit_cast<float>(r.u32()));
        e.tensor = ad::Tensor<Real>(std::move(shape), std::move(values));
        out.push_back(std::move(e));
    }
    if (!r.done()) throw ParseError("checkpoint: trailing bytes");
    return out;
}

}  // namespace ora
