#pragma once

// Canonical JSON text: sorted keys, no insignificant whitespace, floats at 9
// significant digits. Equal values always produce equal bytes, and
// dump(parse(dump(x))) == dump(x).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>

#include <json.hpp>

#include "cmi/errors.hpp"

namespace cmi {

using json = nlohmann::json;

inline std::string format_float9(double v) {
    if (!std::isfinite(v)) throw ValidationError("refusing to serialize a non-finite number");
    if (v == 0.0) return "0";  // folds -0
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

namespace detail {

inline void canonical_dump_into(const json& j, std::string& out) {
    switch (j.type()) {
    case json::value_t::object: {
        out += '{';
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {  // std::map storage: keys already sorted
            if (!first) out += ',';
            first = false;
            out += json(it.key()).dump();
            out += ':';
            canonical_dump_into(it.value(), out);
        }
        out += '}';
        break;
    }
    case json::value_t::array: {
        out += '[';
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (i) out += ',';
            canonical_dump_into(j[i], out);
        }
        out += ']';
        break;
    }
    case json::value_t::number_float: out += format_float9(j.get<double>()); break;
    case json::value_t::discarded: throw ValidationError("cannot serialize a discarded JSON value");
    default: out += j.dump(); break;
    }
}

} // namespace detail

inline std::string canonical_dump(const json& j) {
    std::string out;
    detail::canonical_dump_into(j, out);
    return out;
}

// FNV-1a 64 over the canonical text, as 16 hex digits.
inline std::string digest_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace cmi
