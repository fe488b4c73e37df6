#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace roifuse::codec {

std::string base64_encode(std::span<const unsigned char> bytes);
/// Throws std::invalid_argument on characters outside the alphabet or bad padding.
std::vector<unsigned char> base64_decode(std::string_view text);

/// Little-endian float64 array <-> base64 text.
std::string encode_f64(std::span<const double> values);
std::vector<double> decode_f64(std::string_view text);

}  // namespace roifuse::codec
