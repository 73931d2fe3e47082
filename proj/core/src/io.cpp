// SPDX-License-Identifier: Apache-2.0

#include "unfold/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace unfold {

std::string sha256_hex(const void* data, std::size_t bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, bytes, digest, &len, EVP_sha256(), nullptr) != 1) {
        throw IoError("sha256: digest failed");
    }
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) {
        os << std::setw(2) << static_cast<int>(digest[i]);
    }
    return os.str();
}

std::string sha256_file(const std::filesystem::path& path)
{
    const auto bytes = read_bytes(path);
    return sha256_hex(bytes.data(), bytes.size());
}

namespace {

void put_le(unsigned char* out, double v)
{
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
        out[b] = static_cast<unsigned char>(bits >> (8 * b));
    }
}

double get_le(const unsigned char* in)
{
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(in[b]) << (8 * b);
    }
    return std::bit_cast<double>(bits);
}

}  // namespace

std::vector<unsigned char> encode_payload(const CMat& m)
{
    std::vector<unsigned char> out(static_cast<std::size_t>(m.size()) * 16);
    const cplx* d = m.data();
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        put_le(out.data() + 16 * k, d[k].real());
        put_le(out.data() + 16 * k + 8, d[k].imag());
    }
    return out;
}

CMat decode_payload(const std::vector<unsigned char>& bytes, Eigen::Index rows, Eigen::Index cols)
{
    const std::size_t expected = static_cast<std::size_t>(rows * cols) * 16;
    if (bytes.size() != expected) {
        throw IoError("payload shape mismatch: expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(bytes.size()));
    }
    CMat m(rows, cols);
    cplx* d = m.data();
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        d[k] = cplx(get_le(bytes.data() + 16 * k), get_le(bytes.data() + 16 * k + 8));
    }
    return m;
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    f << text;
    if (!f) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace unfold
