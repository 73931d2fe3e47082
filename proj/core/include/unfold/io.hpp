// SPDX-License-Identifier: Apache-2.0
//
// Binary payload helpers shared by datasets and checkpoints: little-endian
// IEEE-754 double pairs (re, im), column-major.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "unfold/numerics.hpp"

namespace unfold {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string sha256_hex(const void* data, std::size_t bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Serialized bytes of a complex matrix in payload order.
std::vector<unsigned char> encode_payload(const CMat& m);

/// Decodes exactly rows*cols complex values; throws IoError on a size mismatch.
CMat decode_payload(const std::vector<unsigned char>& bytes, Eigen::Index rows, Eigen::Index cols);

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_bytes(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace unfold
