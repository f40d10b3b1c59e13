#include "tuneout/wigner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <vector>

namespace tuneout {
namespace {

std::atomic<long> g_fallbacks{0};

__extension__ typedef __int128 Int128;

std::vector<int> primes_up_to(int n) {
    std::vector<int> primes;
    std::vector<bool> composite(static_cast<std::size_t>(std::max(n, 1)) + 1, false);
    for (int p = 2; p <= n; ++p) {
        if (composite[p]) continue;
        primes.push_back(p);
        for (long q = static_cast<long>(p) * p; q <= n; q += p) composite[q] = true;
    }
    return primes;
}

// Exponent vector of a rational number over a fixed prime list.
struct Factored {
    std::vector<int> exp;
};

void add_factorial(Factored& f, const std::vector<int>& primes, int n, int sign) {
    for (std::size_t i = 0; i < primes.size(); ++i) {
        const int p = primes[i];
        if (p > n) break;
        int e = 0;
        for (long pk = p; pk <= n; pk *= p) e += static_cast<int>(n / pk);
        f.exp[i] += sign * e;
    }
}

// One Racah-sum term: (-1)^t * prod(num!) / prod(den!).
struct Term {
    bool negative;
    std::vector<int> numerator;
    std::vector<int> denominator;
};

// A Racah-type sum  sign0 * sqrt(prefactor) * sum_t term_t  where prefactor is
// a ratio of factorials.
struct RacahSum {
    int sign0 = 1;
    std::vector<int> pref_num;
    std::vector<int> pref_den;
    std::vector<Term> terms;
};

int max_argument(const RacahSum& s) {
    int n = 1;
    for (int v : s.pref_num) n = std::max(n, v);
    for (int v : s.pref_den) n = std::max(n, v);
    for (const auto& t : s.terms) {
        for (int v : t.numerator) n = std::max(n, v);
        for (int v : t.denominator) n = std::max(n, v);
    }
    return n;
}

bool mul_checked(Int128& acc, long factor) {
    const Int128 limit = (static_cast<Int128>(1) << 120);
    if (acc > limit / factor) return false;
    acc *= factor;
    return true;
}

std::optional<long double> evaluate_exact(const RacahSum& s) {
    const auto primes = primes_up_to(max_argument(s));
    const std::size_t np = primes.size();

    Factored pref{std::vector<int>(np, 0)};
    for (int v : s.pref_num) add_factorial(pref, primes, v, +1);
    for (int v : s.pref_den) add_factorial(pref, primes, v, -1);

    std::vector<Factored> terms;
    terms.reserve(s.terms.size());
    for (const auto& t : s.terms) {
        Factored f{std::vector<int>(np, 0)};
        for (int v : t.numerator) add_factorial(f, primes, v, +1);
        for (int v : t.denominator) add_factorial(f, primes, v, -1);
        terms.push_back(std::move(f));
    }

    std::vector<int> common(np, 0);
    for (std::size_t i = 0; i < np; ++i) {
        int m = terms.front().exp[i];
        for (const auto& f : terms) m = std::min(m, f.exp[i]);
        common[i] = m;
    }

    Int128 sum = 0;
    const Int128 limit = (static_cast<Int128>(1) << 120);
    for (std::size_t k = 0; k < terms.size(); ++k) {
        Int128 value = 1;
        for (std::size_t i = 0; i < np; ++i) {
            for (int e = terms[k].exp[i] - common[i]; e > 0; --e) {
                if (!mul_checked(value, primes[i])) return std::nullopt;
            }
        }
        sum += s.terms[k].negative ? -value : value;
        if (sum > limit || sum < -limit) return std::nullopt;
    }
    if (sum == 0) return 0.0L;

    // result = sign0 * sum * prod p^(pref/2 + common)
    long double magnitude = static_cast<long double>(sum < 0 ? -sum : sum);
    long double radicand = 1.0L;
    for (std::size_t i = 0; i < np; ++i) {
        const int twice_exp = pref.exp[i] + 2 * common[i];
        const int whole = (twice_exp >= 0) ? twice_exp / 2 : -((-twice_exp + 1) / 2);
        const int odd = twice_exp - 2 * whole;  // 0 or 1
        magnitude *= std::pow(static_cast<long double>(primes[i]), whole);
        if (odd) radicand *= primes[i];
    }
    magnitude *= std::sqrt(radicand);
    const int sign = s.sign0 * (sum < 0 ? -1 : 1);
    return sign * magnitude;
}

long double log_factorial(int n) { return std::lgamma(static_cast<long double>(n) + 1.0L); }

long double evaluate_floating(const RacahSum& s) {
    long double log_pref = 0.0L;
    for (int v : s.pref_num) log_pref += log_factorial(v);
    for (int v : s.pref_den) log_pref -= log_factorial(v);
    long double sum = 0.0L;
    for (const auto& t : s.terms) {
        long double lt = 0.5L * log_pref;
        for (int v : t.numerator) lt += log_factorial(v);
        for (int v : t.denominator) lt -= log_factorial(v);
        sum += (t.negative ? -1.0L : 1.0L) * std::exp(lt);
    }
    return s.sign0 * sum;
}

long double evaluate(const RacahSum& s) {
    if (s.terms.empty()) return 0.0L;
    if (auto exact = evaluate_exact(s)) return *exact;
    g_fallbacks.fetch_add(1, std::memory_order_relaxed);
    return evaluate_floating(s);
}

// Triangle coefficient factorial arguments for Delta(a b c), in integer units.
void append_delta(RacahSum& s, HalfInt a, HalfInt b, HalfInt c) {
    s.pref_num.push_back((a + b - c).twice() / 2);
    s.pref_num.push_back((a - b + c).twice() / 2);
    s.pref_num.push_back((-a + b + c).twice() / 2);
    s.pref_den.push_back((a + b + c).twice() / 2 + 1);
}

}  // namespace

long double wigner_3j_ext(HalfInt j1, HalfInt j2, HalfInt j3, HalfInt m1, HalfInt m2, HalfInt m3) {
    if ((m1 + m2 + m3).twice() != 0) return 0.0;
    if (!triangle(j1, j2, j3)) return 0.0;
    if (abs(m1) > j1 || abs(m2) > j2 || abs(m3) > j3) return 0.0;
    if (((j1 - m1).twice() % 2) != 0 || ((j2 - m2).twice() % 2) != 0 ||
        ((j3 - m3).twice() % 2) != 0) {
        return 0.0;
    }

    const auto half = [](HalfInt h) { return h.twice() / 2; };  // exact for integers

    RacahSum s;
    const int phase = half(j1 - j2 - m3);
    s.sign0 = (phase % 2 == 0) ? 1 : -1;
    append_delta(s, j1, j2, j3);
    for (HalfInt v : {j1 + m1, j1 - m1, j2 + m2, j2 - m2, j3 + m3, j3 - m3}) {
        s.pref_num.push_back(half(v));
    }

    const int a1 = half(j3 - j2 + m1);
    const int a2 = half(j3 - j1 - m2);
    const int b1 = half(j1 + j2 - j3);
    const int b2 = half(j1 - m1);
    const int b3 = half(j2 + m2);
    const int t_min = std::max({0, -a1, -a2});
    const int t_max = std::min({b1, b2, b3});
    for (int t = t_min; t <= t_max; ++t) {
        s.terms.push_back(Term{t % 2 != 0, {}, {t, a1 + t, a2 + t, b1 - t, b2 - t, b3 - t}});
    }
    return evaluate(s);
}

long double wigner_6j_ext(HalfInt j1, HalfInt j2, HalfInt j3, HalfInt j4, HalfInt j5, HalfInt j6) {
    if (!triangle(j1, j2, j3) || !triangle(j1, j5, j6) || !triangle(j4, j2, j6) ||
        !triangle(j4, j5, j3)) {
        return 0.0;
    }
    const auto half = [](HalfInt h) { return h.twice() / 2; };

    RacahSum s;
    append_delta(s, j1, j2, j3);
    append_delta(s, j1, j5, j6);
    append_delta(s, j4, j2, j6);
    append_delta(s, j4, j5, j3);

    const int a1 = half(j1 + j2 + j3);
    const int a2 = half(j1 + j5 + j6);
    const int a3 = half(j4 + j2 + j6);
    const int a4 = half(j4 + j5 + j3);
    const int b1 = half(j1 + j2 + j4 + j5);
    const int b2 = half(j2 + j3 + j5 + j6);
    const int b3 = half(j3 + j1 + j6 + j4);
    const int t_min = std::max({a1, a2, a3, a4});
    const int t_max = std::min({b1, b2, b3});
    for (int t = t_min; t <= t_max; ++t) {
        s.terms.push_back(
            Term{t % 2 != 0, {t + 1}, {t - a1, t - a2, t - a3, t - a4, b1 - t, b2 - t, b3 - t}});
    }
    return evaluate(s);
}

double wigner_3j(HalfInt j1, HalfInt j2, HalfInt j3, HalfInt m1, HalfInt m2, HalfInt m3) {
    return static_cast<double>(wigner_3j_ext(j1, j2, j3, m1, m2, m3));
}

double wigner_6j(HalfInt j1, HalfInt j2, HalfInt j3, HalfInt j4, HalfInt j5, HalfInt j6) {
    return static_cast<double>(wigner_6j_ext(j1, j2, j3, j4, j5, j6));
}

long wigner_fallback_count() { return g_fallbacks.load(std::memory_order_relaxed); }

}  // namespace tuneout
