#pragma once

#include "visa/core/matrix.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace visa {

/// Writes a matrix as a flat little-endian float32 blob, row-major element
/// order. All on-disk tensors use this layout regardless of the in-memory
/// scalar type.
template <typename S>
void writeBlob(std::ostream& f, const MatX<S>& m) {
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            float v = float(m(r, c));
            f.write(reinterpret_cast<const char*>(&v), sizeof(float));
        }
    }
}

template <typename S>
void writeBlob(const std::filesystem::path& path, const MatX<S>& m) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check(bool(f), "writeBlob: cannot open " + path.string());
    writeBlob(f, m);
}

template <typename S>
MatX<S> readBlob(std::istream& f, Index rows, Index cols) {
    MatX<S> m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            float v;
            f.read(reinterpret_cast<char*>(&v), sizeof(float));
            check(bool(f), "readBlob: truncated blob stream");
            m(r, c) = S(v);
        }
    }
    return m;
}

template <typename S>
MatX<S> readBlob(const std::filesystem::path& path, Index rows, Index cols) {
    std::ifstream f(path, std::ios::binary);
    check(bool(f), "readBlob: cannot open " + path.string());
    return readBlob<S>(f, rows, cols);
}

inline std::uintmax_t blobByteLength(Index rows, Index cols) {
    return std::uintmax_t(rows) * std::uintmax_t(cols) * sizeof(float);
}

/// FNV-1a over the float32 serialization of a matrix; used for freeze
/// contracts and checkpoint integrity.
template <typename S>
std::uint64_t checksum(const MatX<S>& m) {
    std::uint64_t h = 1469598103934665603ull;
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            float v = float(m(r, c));
            unsigned char bytes[sizeof(float)];
            std::memcpy(bytes, &v, sizeof(float));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ull;
            }
        }
    }
    return h;
}

}  // namespace visa
