#pragma once

#include <compare>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>

#include "flowmine/error.hpp"

namespace flowmine {

/// A single src:dest:cmd message exchanged between two components.
struct Message {
  std::string src;
  std::string dest;
  std::string cmd;

  std::string str() const { return src + ':' + dest + ':' + cmd; }

  bool operator==(const Message&) const = default;

  // Ordered by canonical rendering so serialized output sorts the way it reads.
  std::strong_ordering operator<=>(const Message& other) const {
    const auto c = str().compare(other.str());
    if (c < 0) return std::strong_ordering::less;
    if (c > 0) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
  }
};

inline std::ostream& operator<<(std::ostream& os, const Message& m) { return os << m.str(); }

inline bool valid_field(std::string_view field) {
  if (field.empty()) return false;
  for (char c : field) {
    if (c == ':' || c == '|' || c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
        c == '\v' || c == '\f')
      return false;
  }
  return true;
}

inline Message make_message(std::string src, std::string dest, std::string cmd) {
  if (!valid_field(src) || !valid_field(dest) || !valid_field(cmd))
    throw data_error("invalid message fields '" + src + "', '" + dest + "', '" + cmd + "'");
  return Message{std::move(src), std::move(dest), std::move(cmd)};
}

inline Message parse_message(std::string_view text) {
  const auto a = text.find(':');
  const auto b = a == std::string_view::npos ? a : text.find(':', a + 1);
  if (b == std::string_view::npos || text.find(':', b + 1) != std::string_view::npos)
    throw data_error("malformed message '" + std::string(text) + "' (want src:dest:cmd)");
  return make_message(std::string(text.substr(0, a)),
                      std::string(text.substr(a + 1, b - a - 1)),
                      std::string(text.substr(b + 1)));
}

}  // namespace flowmine

template <>
struct std::hash<flowmine::Message> {
  std::size_t operator()(const flowmine::Message& m) const noexcept {
    return std::hash<std::string>{}(m.str());
  }
};
