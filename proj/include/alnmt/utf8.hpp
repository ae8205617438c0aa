#pragma once

#include <string>
#include <string_view>

namespace alnmt::utf8 {

/// Decodes UTF-8, silently dropping malformed bytes.
std::u32string decode(std::string_view s);
std::string encode(std::u32string_view cps);
void append(std::string& out, char32_t cp);

}  // namespace alnmt::utf8
