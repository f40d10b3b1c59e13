#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "oracles/sublevel_sum.hpp"
#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/polarizability.hpp"

using namespace tuneout;

namespace {

const std::string kRb87 = TUNEOUT_DATA_DIR "/rb87.species";
const double kPi = constants::pi;

const SpeciesData& rb87() {
    static const SpeciesData d = load_species_data(kRb87);
    return d;
}

HyperfineState ground(int F, int m) {
    HyperfineState s;
    s.F = F;
    s.m_F = m;
    return s;
}

bool close_rel(double a, double b, double rel) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b));
}

std::vector<double> grid(double lo, double hi, int n) {
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    return g;
}

// max |v - line| / max |v| for the least-squares line through (g, v)
double line_deviation(const std::vector<double>& g, const std::vector<double>& v) {
    const double n = static_cast<double>(g.size());
    double cx = 0, cy = 0;
    for (std::size_t i = 0; i < g.size(); ++i) cx += g[i], cy += v[i];
    cx /= n;
    cy /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        sxx += (g[i] - cx) * (g[i] - cx);
        sxy += (g[i] - cx) * (v[i] - cy);
    }
    double dev = 0, mx = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        dev = std::max(dev, std::abs(v[i] - cy - sxy / sxx * (g[i] - cx)));
        mx = std::max(mx, std::abs(v[i]));
    }
    return dev / mx;
}

}  // namespace

TEST_CASE("polarisation parameters") {
    LightField l;
    l.theta0_rad = kPi / 4;
    l.theta_k_rad = 0.0;
    auto p = polarization_params(l);
    CHECK(p.A == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(p.C == doctest::Approx(1.0).epsilon(1e-15));

    l.theta0_rad = 0.0;
    p = polarization_params(l);
    CHECK(p.A == 0.0);
    CHECK(p.C == 0.0);

    l.theta0_rad = -0.223 * kPi / 180.0;
    p = polarization_params(l);
    CHECK(p.A == doctest::Approx(-7.80e-3).epsilon(0.01));

    l.theta_p_rad = kPi / 2;
    CHECK(polarization_params(l).D == doctest::Approx(-0.5));
    l.theta_p_rad = 0.0;
    CHECK(polarization_params(l).D == doctest::Approx(1.0));

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ang(-10.0, 10.0);
    for (int i = 0; i < 1000; ++i) {
        l.theta0_rad = ang(rng);
        l.theta_k_rad = ang(rng);
        l.theta_p_rad = ang(rng);
        p = polarization_params(l);
        CHECK(std::abs(p.A) <= 1.0);
        CHECK(std::abs(p.C) <= 1.0);
        CHECK(p.D >= -0.5);
        CHECK(p.D <= 1.0);
    }
}

TEST_CASE("light field validation") {
    LightField l;
    l.wavelength_nm = -1.0;
    CHECK_THROWS_AS(l.validate(), ValidationError);
    l.wavelength_nm = 790.0;
    l.intensity_W_m2 = -1.0;
    CHECK_THROWS_AS(l.validate(), ValidationError);
    CHECK(LightField::intensity_from_mW_cm2(136.0) == doctest::Approx(1360.0));
}

TEST_CASE("Stark-shift weights") {
    CHECK(vector_weight(1, 1) == doctest::Approx(0.5));
    CHECK(vector_weight(1, 0) == 0.0);
    CHECK(tensor_weight(1, 0) == doctest::Approx(-1.0));
    CHECK(tensor_weight(1, 1) == doctest::Approx(0.5));
    CHECK(tensor_weight(HalfInt::from_twice(1), HalfInt::from_twice(1)) == 0.0);
    CHECK(vector_weight(0, 0) == 0.0);
}

TEST_CASE("sign structure of the D-line polarisability") {
    const auto a850 = d_line_polarizabilities(ground(1, 0), 850.0, rb87());
    CHECK(a850.scalar > 0.0);
    CHECK(a850.scalar == doctest::Approx(2128.0).epsilon(0.01));

    // one sign change between the lines for F = 1
    int changes = 0;
    double prev = d_line_polarizabilities(ground(1, 0), 780.5, rb87()).scalar;
    for (double nm : grid(780.5, 794.5, 2801)) {
        const double v = d_line_polarizabilities(ground(1, 0), nm, rb87()).scalar;
        changes += (v < 0.0) != (prev < 0.0);
        prev = v;
    }
    CHECK(changes == 1);
}

TEST_CASE("resonance guard band") {
    const PolarizabilityModel m(ground(1, 0), rb87());
    double on_line = 0.0;
    for (const auto& t : m.terms()) {
        if (t.line == "D2") on_line = constants::speed_of_light / t.frequency_Hz * 1e9;
    }
    REQUIRE(on_line > 0.0);
    try {
        m.d_lines(on_line);
        FAIL("evaluated on resonance");
    } catch (const ResonanceError& e) {
        CHECK(e.wavelength_nm() == on_line);
        CHECK(std::string(e.what()).find("D2") != std::string::npos);
    }
    // 20 line widths away is fine
    const double nu = constants::speed_of_light / (on_line * 1e-9) + 20 * 6.0666e6;
    CHECK_NOTHROW(m.d_lines(constants::speed_of_light / nu * 1e9));
}

TEST_CASE("factorised sums equal the sublevel oracle") {
    const auto& d = rb87();
    const auto lambdas = grid(780.5, 794.5, 50);
    int compared = 0;
    for (int F = 1; F <= 2; ++F) {
        for (int m = -F; m <= F; ++m) {
            const PolarizabilityModel model(ground(F, m), d);
            for (double nm : lambdas) {
                const auto fact = model.d_lines(nm);
                const auto brute = oracle::decompose(oracle::polarizability_tensor(d, 2 * F, 2 * m, nm));
                INFO("F=" << F << " m=" << m << " lambda=" << nm);
                CHECK(close_rel(fact.scalar, brute.scalar, 1e-10));
                if (m != 0) {
                    const double av = brute.vector_part * 2.0 * F / m;
                    CHECK(close_rel(fact.vector, av, 1e-10));
                }
                const double wt = tensor_weight(F, m);
                const double at = -brute.tensor_part / (1.5 * wt);
                CHECK(close_rel(fact.tensor, at, 1e-10));
                ++compared;
            }
        }
    }
    CHECK(compared == 8 * 50);
}

TEST_CASE("shift bracket equals the oracle for arbitrary polarisation") {
    const auto& d = rb87();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ang(0.0, 2 * kPi);
    std::uniform_real_distribution<double> wl(781.0, 794.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int F = 1 + trial % 2;
        const int m = static_cast<int>(trial / 2 % (2 * F + 1)) - F;
        LightField l;
        l.wavelength_nm = wl(rng);
        l.theta0_rad = ang(rng);
        l.theta_k_rad = ang(rng) / 2;
        const double phi = ang(rng);
        const auto u = oracle::polarisation(l.theta0_rad, l.theta_k_rad, phi);
        l.theta_p_rad = std::acos(std::min(1.0, static_cast<double>(std::abs(u[2]))));
        const double want =
            oracle::contract(oracle::polarizability_tensor(d, 2 * F, 2 * m, l.wavelength_nm), u);
        const double got = PolarizabilityModel(ground(F, m), d)
                               .shift_coefficient(l, Contributions{true, true, false, false});
        INFO("F=" << F << " m=" << m << " lambda=" << l.wavelength_nm);
        CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("sigma+ light lowers the m_F = +1 bracket below the scalar at 790 nm") {
    // Right-handed light along the quantisation axis: the oracle builds
    // u = (e_x + i e_y)/sqrt2 explicitly, the model uses C = +1.
    const auto& d = rb87();
    const auto u = oracle::polarisation(kPi / 4, 0.0, 0.0);
    const double brute = oracle::contract(oracle::polarizability_tensor(d, 2, 2, 790.0), u);
    LightField l;
    l.wavelength_nm = 790.0;
    l.theta0_rad = kPi / 4;
    l.theta_p_rad = kPi / 2;
    const PolarizabilityModel m(ground(1, 1), d);
    const double model = m.shift_coefficient(l, Contributions{true, true, false, false});
    CHECK(model == doctest::Approx(brute).epsilon(1e-10));
    CHECK(m.d_lines(790.0).vector < 0.0);
}

TEST_CASE("total scalar polarisability") {
    const auto& d = rb87();
    const auto s = ground(1, 0);
    const SpeciesData bare = d.without_residuals();
    for (double nm : {781.0, 790.0, 850.0, 1064.0}) {
        CHECK(total_scalar_polarizability(s, nm, bare) ==
              d_line_polarizabilities(s, nm, bare).scalar);
        CHECK(total_scalar_polarizability(s, nm, d) ==
              doctest::Approx(d_line_polarizabilities(s, nm, d).scalar + 3.031 + 8.709)
                  .epsilon(1e-14));
    }
    const Contributions none = Contributions::d_lines_only();
    CHECK(total_scalar_polarizability(s, 800.0, d, none) ==
          d_line_polarizabilities(s, 800.0, d).scalar);
}

TEST_CASE("size of the residual constants") {
    const auto& d = rb87();
    const double residual = d.alpha_higher_p_au.value + d.alpha_core_au.value;
    // Far from the lines the residuals are a small correction: the D-line
    // scalar at 850 nm is ~180 times larger (about 2.3 decades, not 4).
    const double r850 = d_line_polarizabilities(ground(1, 0), 850.0, d).scalar / residual;
    CHECK(r850 > 100.0);
    CHECK(r850 == doctest::Approx(181.0).epsilon(0.02));
    // Near the tune-out each single line exceeds them by ~700 while the sum
    // cancels to zero.
    const PolarizabilityModel m(ground(1, 0), d);
    const double omega = constants::speed_of_light / 790.0e-9 / constants::hartree_frequency;
    double d1 = 0.0, d2 = 0.0;
    for (const auto& t : m.terms()) {
        const double w0 = t.frequency_Hz / constants::hartree_frequency;
        const double v = t.coupling[0] * t.strength * (1 / (w0 - omega) + 1 / (w0 + omega)) / 3.0;
        (t.line == "D1" ? d1 : d2) += v;
    }
    CHECK(std::abs(d1) / residual > 500.0);
    CHECK(std::abs(d2) / residual > 500.0);
    CHECK(std::abs(d1 + d2) < 0.01 * std::abs(d1));
}

TEST_CASE("ac Stark shift properties") {
    const auto& d = rb87();
    LightField l;
    l.wavelength_nm = 790.2;
    l.intensity_W_m2 = 1e7;
    l.theta_p_rad = kPi / 2;

    SUBCASE("m_F = 0 has no vector shift") {
        const PolarizabilityModel m(ground(1, 0), d);
        l.theta0_rad = 0.0;
        const double ref = ac_stark_shift(m, l, d.mass_kg.value).hz;
        for (double t0 : {0.1, 0.3, kPi / 4, -0.7}) {
            l.theta0_rad = t0;
            CHECK(close_rel(ac_stark_shift(m, l, d.mass_kg.value).hz, ref, 1e-12));
        }
    }
    SUBCASE("m_F = +1 and -1 differ only by the vector term") {
        l.theta0_rad = 0.2;
        const PolarizabilityModel p(ground(1, 1), d);
        const PolarizabilityModel n(ground(1, -1), d);
        const double vp = ac_stark_shift(p, l, d.mass_kg.value).hz;
        const double vn = ac_stark_shift(n, l, d.mass_kg.value).hz;
        Contributions novec;
        novec.vector = false;
        const double sp = ac_stark_shift(p, l, d.mass_kg.value, novec).hz;
        const double sn = ac_stark_shift(n, l, d.mass_kg.value, novec).hz;
        CHECK(sp == sn);
        CHECK((vp - sp) == doctest::Approx(-(vn - sn)).epsilon(1e-10));
        CHECK(std::abs(vp - sp) > 0.0);
    }
    SUBCASE("tensor term is even in m_F for any D") {
        Contributions novec;
        novec.vector = false;
        for (double tp : {0.0, 0.4, kPi / 2, 2.0}) {
            l.theta_p_rad = tp;
            const double a = ac_stark_shift(ground(1, 1), l, d, novec).hz;
            const double b = ac_stark_shift(ground(1, -1), l, d, novec).hz;
            CHECK(a == b);
        }
    }
    SUBCASE("tune-out region at the typical intensity") {
        LightField t;
        t.wavelength_nm = 790.0185;
        t.intensity_W_m2 = LightField::intensity_from_mW_cm2(136.0);
        t.theta_p_rad = kPi / 2;
        CHECK(std::abs(ac_stark_shift(ground(1, 0), t, d).recoil) < 0.05);
    }
    SUBCASE("far detuned at 1064 nm") {
        for (int F = 1; F <= 2; ++F) {
            const auto a = d_line_polarizabilities(ground(F, 0), 1064.0, d);
            CHECK(a.scalar > 0.0);
            CHECK(a.scalar >= 10.0 * std::abs(a.vector));
            CHECK(a.scalar >= 10.0 * std::abs(a.tensor));
        }
    }
    SUBCASE("Hz and recoil representations agree") {
        const auto s = ac_stark_shift(ground(1, 0), l, d);
        CHECK(s.recoil == doctest::Approx(s.hz / recoil_energy_hz(l.wavelength_nm, d.mass_kg.value)));
    }
}

TEST_CASE("lattice depth") {
    const auto& d = rb87();
    LightField beam;
    beam.wavelength_nm = 789.0;
    beam.theta_p_rad = kPi / 2;
    CHECK(lattice_depth(ground(1, 0), beam, d) == 0.0);
    beam.intensity_W_m2 = 1e6;
    const double v1 = lattice_depth(ground(1, 0), beam, d);
    beam.intensity_W_m2 = 2e6;
    CHECK(lattice_depth(ground(1, 0), beam, d) == doctest::Approx(2 * v1).epsilon(1e-14));
    beam.intensity_W_m2 = 4e6;
    CHECK(lattice_depth(ground(1, 0), beam, d) ==
          doctest::Approx(ac_stark_shift(ground(1, 0), beam.with_intensity(16e6), d).recoil));
}

TEST_CASE("lattice depth is nearly linear around the tune-out") {
    // The same straight-line test on depths from the sublevel oracle.
    const auto& d = rb87();
    const auto u = oracle::polarisation(0.0, 0.0, 0.0);
    const PolarizabilityModel model(ground(1, 0), d);
    LightField beam;
    beam.intensity_W_m2 = 1e7;
    beam.theta_p_rad = kPi / 2;
    const auto oracle_dev = [&](double lo, double hi) {
        const auto g = grid(lo, hi, 81);
        std::vector<double> v;
        for (double nm : g) {
            v.push_back(-oracle::contract(oracle::polarizability_tensor(d, 2, 0, nm), u) -
                        d.alpha_higher_p_au.value - d.alpha_core_au.value);
        }
        return line_deviation(g, v);
    };
    const auto model_dev = [&](double lo, double hi) {
        const auto g = grid(lo, hi, 81);
        std::vector<double> v;
        for (double nm : g) v.push_back(-model.shift_coefficient(beam.at_wavelength(nm), Contributions::all()));
        return line_deviation(g, v);
    };
    // +-35 pm around the root: within 0.25 %
    CHECK(oracle_dev(789.983, 790.053) <= 0.0025);
    CHECK(model_dev(789.983, 790.053) == doctest::Approx(oracle_dev(789.983, 790.053)).epsilon(1e-6));
    // 789.9 - 790.1 nm: the curvature gives about 0.58 %
    const double wide = oracle_dev(789.9, 790.1);
    CHECK(model_dev(789.9, 790.1) == doctest::Approx(wide).epsilon(1e-6));
    CHECK(wide == doctest::Approx(0.0057).epsilon(0.05));
}

TEST_CASE("recoil energy") {
    const double m = rb87().mass_kg.value;
    const double direct = 6.62607015e-34 / (2.0 * m * 790e-9 * 790e-9);
    CHECK(recoil_energy_hz(790.0, m) == doctest::Approx(direct).epsilon(1e-15));
    CHECK(recoil_energy_hz(790.0, m) == doctest::Approx(3679.0).epsilon(1e-3));
    CHECK(recoil_energy_hz(1580.0, m) == doctest::Approx(recoil_energy_hz(790.0, m) / 4));
    const double m_cs = 132.905451961 * constants::atomic_mass_unit;
    CHECK(recoil_energy_hz(790.0, m_cs) / recoil_energy_hz(790.0, m) ==
          doctest::Approx(m / m_cs).epsilon(1e-14));
    CHECK_THROWS_AS(recoil_energy_hz(0.0, m), ValidationError);
}
