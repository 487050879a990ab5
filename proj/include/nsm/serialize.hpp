// Serialization helpers: base64 for embedding blobs, round-trip-safe double
// formatting for text formats.

#pragma once

#include <string>
#include <vector>

namespace nsm {

std::string base64_encode(const unsigned char* data, size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

std::string base64_doubles(const std::vector<double>& values);
std::vector<double> doubles_from_base64(const std::string& text);

// Shortest text form that parses back to the identical double (%.17g).
std::string format_double(double v);

}  // namespace nsm
