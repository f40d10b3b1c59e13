#include "tuneout/half_int.hpp"

#include <cmath>
#include <cstdlib>

#include "tuneout/errors.hpp"

namespace tuneout {

HalfInt HalfInt::from_double(double value) {
    const double twice = 2.0 * value;
    const double rounded = std::round(twice);
    if (!std::isfinite(value) || std::abs(twice - rounded) > 1e-9) {
        throw ValidationError("not a half-integer: " + std::to_string(value));
    }
    return from_twice(static_cast<int>(rounded));
}

HalfInt HalfInt::parse(const std::string& text) {
    const auto slash = text.find('/');
    try {
        if (slash == std::string::npos) return from_double(std::stod(text));
        const int num = std::stoi(text.substr(0, slash));
        const int den = std::stoi(text.substr(slash + 1));
        if (den == 1) return HalfInt(num);
        if (den == 2) return from_twice(num);
    } catch (const std::logic_error&) {
        // fall through to the error below
    }
    throw ValidationError("cannot parse half-integer '" + text + "'");
}

std::string HalfInt::str() const {
    if (is_integer()) return std::to_string(twice_ / 2);
    return std::to_string(twice_) + "/2";
}

}  // namespace tuneout
