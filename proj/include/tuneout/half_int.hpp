#pragma once

#include <compare>
#include <string>

namespace tuneout {

// Angular momentum quantum number stored as twice its value, so that
// 1/2, 3/2, ... are exact.
class HalfInt {
public:
    constexpr HalfInt() = default;
    constexpr HalfInt(int value) : twice_(2 * value) {}  // NOLINT: implicit from integers

    static constexpr HalfInt from_twice(int twice) {
        HalfInt h;
        h.twice_ = twice;
        return h;
    }
    // Throws ValidationError unless `value` is an integer multiple of 1/2.
    static HalfInt from_double(double value);
    // Accepts "3/2", "-1/2", "2", "1.5".
    static HalfInt parse(const std::string& text);

    constexpr int twice() const { return twice_; }
    constexpr double value() const { return 0.5 * twice_; }
    constexpr bool is_integer() const { return twice_ % 2 == 0; }

    constexpr HalfInt operator-() const { return from_twice(-twice_); }
    constexpr HalfInt operator+(HalfInt o) const { return from_twice(twice_ + o.twice_); }
    constexpr HalfInt operator-(HalfInt o) const { return from_twice(twice_ - o.twice_); }
    constexpr HalfInt& operator+=(HalfInt o) {
        twice_ += o.twice_;
        return *this;
    }

    constexpr auto operator<=>(const HalfInt&) const = default;

    std::string str() const;

private:
    int twice_ = 0;
};

constexpr HalfInt abs(HalfInt h) { return h.twice() < 0 ? -h : h; }

// |a - b| <= c <= a + b and a + b + c integer.
constexpr bool triangle(HalfInt a, HalfInt b, HalfInt c) {
    const int s = a.twice() + b.twice() + c.twice();
    return s % 2 == 0 && c >= abs(a - b) && c <= a + b;
}

}  // namespace tuneout
