#pragma once

#include <string>
#include <string_view>

namespace urbansense {

std::string sha256_hex(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace urbansense
