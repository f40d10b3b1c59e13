#include "commands.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <set>

#include "records.hpp"
#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/pipeline.hpp"
#include "tuneout/tuneout_solver.hpp"

namespace tuneout::cli {

namespace {

constexpr const char* kTool = "tuneout-cli 1.0.0";

// Options that only route output or set parallelism; they stay out of the digest.
const std::set<std::string> kUndigested = {"help", "config", "output", "csv", "jobs", "out-dir",
                                           "scan-out", "version"};

std::string canonical(const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec == std::errc() && r.ptr == s.data() + s.size()) return num(v);
    return s;
}

json option_values(const CLI::App& app) {
    json out = json::object();
    for (const CLI::Option* opt : app.get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || kUndigested.count(name)) continue;
        json vals = json::array();
        if (opt->count() > 0) {
            for (const auto& r : opt->results()) vals.push_back(canonical(r));
        } else {
            vals.push_back(canonical(opt->get_default_str()));
        }
        out[name] = vals;
    }
    return out;
}

// Digest over the resolved options of the subcommand and the species path.
std::string config_digest(const CLI::App& sub) {
    json cfg;
    cfg["command"] = sub.get_name();
    cfg["options"] = option_values(sub);
    cfg["global"] = option_values(*sub.get_parent());
    return sha256_hex(cfg.dump());
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::uint64_t out[1];
    seq.generate(reinterpret_cast<std::uint32_t*>(out), reinterpret_cast<std::uint32_t*>(out) + 2);
    return out[0];
}

struct SpeciesInput {
    SpeciesData data;
    json provenance;
};

SpeciesInput load_species(const Globals& g, const std::string& mode) {
    SpeciesInput s{load_species_data(g.species), {}};
    if (mode == "direct") s.data = s.data.with_mode(MatrixElementMode::Direct);
    if (mode == "ratio") s.data = s.data.with_mode(MatrixElementMode::Ratio);
    s.provenance = {{"path", g.species},
                    {"sha256", file_sha256(g.species)},
                    {"name", s.data.name},
                    {"mode", s.data.mode == MatrixElementMode::Ratio ? "ratio" : "direct"}};
    return s;
}

json provenance(json species = nullptr, json inputs = nullptr, std::optional<std::uint64_t> seed = {}) {
    json p{{"tool", kTool}};
    if (!species.is_null()) p["species"] = std::move(species);
    if (!inputs.is_null()) p["inputs"] = std::move(inputs);
    if (seed) p["seed"] = *seed;
    return p;
}

json input_entry(const std::filesystem::path& path) {
    return {{"path", path.string()}, {"sha256", file_sha256(path)}};
}

HyperfineState ground(const SpeciesData& d, int F, int m_F) {
    HyperfineState s;
    s.I = d.nuclear_spin;
    s.F = F;
    s.m_F = m_F;
    s.validate();
    return s;
}

struct Toggles {
    bool no_vector = false;
    bool no_tensor = false;
    bool no_higher_p = false;
    bool no_core = false;

    void add(CLI::App* a) {
        a->add_flag("--no-vector", no_vector, "Switch the vector term off");
        a->add_flag("--no-tensor", no_tensor, "Switch the tensor term off");
        a->add_flag("--no-higher-p", no_higher_p, "Drop the 5s-6p+ residual");
        a->add_flag("--no-core", no_core, "Drop the core and core-valence residual");
    }
    Contributions get() const { return {!no_vector, !no_tensor, !no_higher_p, !no_core}; }
};

json toggles_json(const Contributions& c) {
    return {{"vector", c.vector}, {"tensor", c.tensor}, {"higher_p", c.higher_p}, {"core", c.core}};
}

std::vector<double> linspace(double lo, double hi, int n) {
    if (n < 2 || !(hi > lo)) throw ValidationError("grids need at least 2 points and max > min");
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return g;
}

std::string csv_text(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n') c = ';';
    }
    return s;
}

const CLI::Validator kMode = CLI::IsMember({"file", "direct", "ratio"});

// ---------------------------------------------------------------------------

Command polarizability(CLI::App& app, Globals& g) {
    struct Opts {
        double lo = 775.0, hi = 800.0;
        int points = 251;
        int F = 1;
        std::vector<int> m_F{-1, 0, 1};
        double theta0_deg = 45.0, theta_k_deg = 0.0, theta_p_deg = 90.0;
        double intensity_mW_cm2 = 136.0;
        double guard = 10.0;
        std::string mode = "file";
        Toggles toggles;
    };
    auto o = std::make_shared<Opts>();
    auto* a = app.add_subcommand("polarizability", "Polarisabilities and Stark shift over a wavelength grid");
    a->add_option("--lambda-min", o->lo, "Grid start, nm");
    a->add_option("--lambda-max", o->hi, "Grid end, nm");
    a->add_option("--points", o->points, "Grid points")->check(CLI::PositiveNumber);
    a->add_option("--F", o->F, "Ground hyperfine level")->check(CLI::IsMember({1, 2}));
    a->add_option("--m-F", o->m_F, "Sublevels")->delimiter(',');
    a->add_option("--theta0-deg", o->theta0_deg, "Ellipticity angle; 45 is circular");
    a->add_option("--theta-k-deg", o->theta_k_deg, "Wave vector against the quantisation axis");
    a->add_option("--theta-p-deg", o->theta_p_deg, "Polarisation vector against the quantisation axis");
    a->add_option("--intensity-mW-cm2", o->intensity_mW_cm2, "Single-beam intensity")->check(CLI::NonNegativeNumber);
    a->add_option("--guard-linewidths", o->guard, "Resonance guard band in natural widths");
    a->add_option("--mode", o->mode, "Dipole parametrisation: file, direct or ratio")->check(kMode);
    o->toggles.add(a);

    return {a, [o, a, &g] {
                const auto grid = linspace(o->lo, o->hi, o->points);
                const auto sp = load_species(g, o->mode);
                const Contributions c = o->toggles.get();
                LightField light;
                light.intensity_W_m2 = LightField::intensity_from_mW_cm2(o->intensity_mW_cm2);
                light.theta0_rad = o->theta0_deg * constants::pi / 180.0;
                light.theta_k_rad = o->theta_k_deg * constants::pi / 180.0;
                light.theta_p_rad = o->theta_p_deg * constants::pi / 180.0;
                light.validate();
                PolarizabilityOptions popt;
                popt.guard_linewidths = o->guard;
                std::vector<PolarizabilityModel> models;
                for (int m : o->m_F) models.emplace_back(ground(sp.data, o->F, m), sp.data, popt);

                RecordSink sink("polarizability", config_digest(*a), provenance(sp.provenance), g.output, g.csv);
                sink.csv_header({"lambda_nm", "m_F", "alpha_s_au", "alpha_v_au", "alpha_T_au", "shift_hz", "v0_recoil"});
                std::vector<std::vector<double>> v0(models.size());
                for (double nm : grid) {
                    for (std::size_t k = 0; k < models.size(); ++k) {
                        const auto set = models[k].d_lines(nm);
                        const double as = models[k].total_scalar(nm, c);
                        const auto shift = ac_stark_shift(models[k], light.at_wavelength(nm), sp.data.mass_kg.value, c);
                        v0[k].push_back(shift.recoil);
                        sink.record("polarizability_point", {{"lambda_nm", nm},
                                                             {"m_F", o->m_F[k]},
                                                             {"alpha_s_au", as},
                                                             {"alpha_v_au", set.vector},
                                                             {"alpha_T_au", set.tensor},
                                                             {"shift_hz", shift.hz},
                                                             {"v0_recoil", shift.recoil}});
                        sink.csv_row({num(nm), std::to_string(o->m_F[k]), num(as), num(set.vector),
                                      num(set.tensor), num(shift.hz), num(shift.recoil)});
                    }
                }
                // Sign changes of V0 on the grid, linearly interpolated; intervals
                // holding a line are poles, not zeros.
                std::vector<double> lines_nm;
                for (const auto& l : sp.data.lines) lines_nm.push_back(1e9 * constants::speed_of_light / l.frequency_Hz.value);
                const auto holds_line = [&](double lo, double hi) {
                    for (double l : lines_nm) {
                        if (l > lo - 0.01 && l < hi + 0.01) return true;
                    }
                    return false;
                };
                for (std::size_t k = 0; k < models.size(); ++k) {
                    json roots = json::array();
                    for (std::size_t i = 1; i < grid.size(); ++i) {
                        if (holds_line(grid[i - 1], grid[i])) continue;
                        const double y0 = v0[k][i - 1], y1 = v0[k][i];
                        if (y0 == 0.0 && y1 == 0.0) continue;
                        if (y0 * y1 < 0.0 || (y1 == 0.0 && y0 != 0.0)) {
                            roots.push_back(grid[i - 1] + (grid[i] - grid[i - 1]) * y0 / (y0 - y1));
                        }
                    }
                    sink.record("zero_crossings", {{"m_F", o->m_F[k]}, {"lambda_nm", roots}, {"toggles", toggles_json(c)}});
                }
                sink.finish();
            }};
}

Command tuneout_root(CLI::App& app, Globals& g) {
    struct Opts {
        int F = 1, m_F = 0;
        double A = 0.0, theta_k_deg = 0.0, theta_p_deg = 90.0;
        double intensity = 3.9e7;
        double lo = 0.0, hi = 0.0, tolerance = 1e-10;
        int max_iterations = 200;
        std::string mode = "file";
        bool no_ledger = false;
        std::string propagation = "sensitivity";
        int samples = 400;
        std::optional<std::uint64_t> seed;
        Toggles toggles;
    };
    auto o = std::make_shared<Opts>();
    auto* a = app.add_subcommand("tuneout", "Tune-out root and the contribution ledger");
    a->add_option("--F", o->F, "Ground hyperfine level")->check(CLI::IsMember({1, 2}));
    a->add_option("--m-F", o->m_F, "Sublevel");
    a->add_option("--A", o->A, "Degree of circular polarisation")->check(CLI::Range(-1.0, 1.0));
    a->add_option("--theta-k-deg", o->theta_k_deg, "Wave vector against the quantisation axis");
    a->add_option("--theta-p-deg", o->theta_p_deg, "Polarisation vector against the quantisation axis");
    a->add_option("--intensity-W-m2", o->intensity, "Lattice beam intensity for the E_r slope")->check(CLI::NonNegativeNumber);
    a->add_option("--lo", o->lo, "Bracket start, nm (0 picks the default bracket)");
    a->add_option("--hi", o->hi, "Bracket end, nm");
    a->add_option("--tolerance", o->tolerance, "Root tolerance, nm")->check(CLI::PositiveNumber);
    a->add_option("--max-iterations", o->max_iterations, "Root solver iteration cap")->check(CLI::PositiveNumber);
    a->add_option("--mode", o->mode, "Dipole parametrisation: file, direct or ratio")->check(kMode);
    a->add_flag("--no-ledger", o->no_ledger, "Skip the contribution ledger");
    a->add_option("--propagation", o->propagation, "Ledger uncertainty propagation")
        ->check(CLI::IsMember({"sensitivity", "montecarlo"}));
    a->add_option("--samples", o->samples, "Monte-Carlo samples")->check(CLI::PositiveNumber);
    a->add_option("--seed", o->seed, "Seed, required for Monte-Carlo propagation");
    o->toggles.add(a);

    return {a, [o, a, &g] {
                const bool mc = o->propagation == "montecarlo" && !o->no_ledger;
                if (mc && !o->seed) throw ValidationError("tuneout: Monte-Carlo propagation needs --seed");
                const auto sp = load_species(g, o->mode);
                const auto state = ground(sp.data, o->F, o->m_F);
                LightField light = linear_lattice_geometry(o->intensity);
                light.theta0_rad = 0.5 * std::asin(o->A);
                light.theta_k_rad = o->theta_k_deg * constants::pi / 180.0;
                light.theta_p_rad = o->theta_p_deg * constants::pi / 180.0;
                TuneoutOptions topt;
                topt.lo_nm = o->lo;
                topt.hi_nm = o->hi;
                topt.tolerance_nm = o->tolerance;
                topt.max_iterations = o->max_iterations;
                const Contributions c = o->toggles.get();

                const auto r = find_tuneout(state, light, sp.data, c, topt);
                RecordSink sink("tuneout", config_digest(*a), provenance(sp.provenance, nullptr, mc ? o->seed : std::nullopt),
                                g.output, g.csv);
                sink.csv_header({"quantity", "value_nm", "sigma_nm"});
                sink.record("tuneout_root", {{"lambda_nm", r.wavelength_nm},
                                             {"slope_au_per_pm", r.slope_au_per_pm},
                                             {"slope_recoil_per_pm", r.slope_recoil_per_pm},
                                             {"bracket_nm", {r.bracket_lo_nm, r.bracket_hi_nm}},
                                             {"iterations", r.iterations},
                                             {"F", o->F},
                                             {"m_F", o->m_F},
                                             {"toggles", toggles_json(c)}});
                sink.csv_row({"root", num(r.wavelength_nm), ""});
                if (!o->no_ledger) {
                    LedgerOptions lopt;
                    lopt.solver = topt;
                    lopt.propagation = mc ? Propagation::MonteCarlo : Propagation::Sensitivity;
                    lopt.seed = o->seed.value_or(0);
                    lopt.samples = o->samples;
                    lopt.jobs = g.jobs;
                    lopt.dataset = sp.data.name;
                    const auto l = contribution_ledger(state, light, sp.data, lopt);
                    const auto u = [](const Uncertain& x) { return json{{"value", x.value}, {"sigma", x.sigma}}; };
                    json sens = json::array();
                    for (const auto& s : l.sensitivities) {
                        sens.push_back({{"datum", s.datum}, {"base_nm", s.base_nm}, {"tensor_nm", s.tensor_nm},
                                        {"higher_p_nm", s.higher_p_nm}, {"core_nm", s.core_nm}, {"total_nm", s.total_nm}});
                    }
                    sink.record("contribution_ledger", {{"dataset", l.dataset},
                                                        {"propagation", mc ? "montecarlo" : "sensitivity"},
                                                        {"base_nm", u(l.base_nm)},
                                                        {"tensor_shift_nm", u(l.tensor_shift_nm)},
                                                        {"higher_p_shift_nm", u(l.higher_p_shift_nm)},
                                                        {"core_shift_nm", u(l.core_shift_nm)},
                                                        {"total_nm", u(l.total_nm)},
                                                        {"shift_sum_nm", l.shift_sum_nm()},
                                                        {"tensor_alone_nm", l.tensor_alone_nm},
                                                        {"higher_p_alone_nm", l.higher_p_alone_nm},
                                                        {"core_alone_nm", l.core_alone_nm},
                                                        {"sensitivities", sens}});
                    const std::pair<const char*, const Uncertain*> rows[] = {
                        {"base", &l.base_nm}, {"tensor_shift", &l.tensor_shift_nm},
                        {"higher_p_shift", &l.higher_p_shift_nm}, {"core_shift", &l.core_shift_nm},
                        {"total", &l.total_nm}};
                    for (const auto& [name, x] : rows) sink.csv_row({name, num(x->value), num(x->sigma)});
                }
                sink.finish();
            }};
}

Command kd_simulate(CLI::App& app, Globals& g) {
    struct Opts {
        std::vector<double> depths;
        double depth_min = 0.0, depth_max = 20.0;
        int points = 21;
        double pulse_us = 12.0;
        double wavelength_nm = 790.01858;
        double recoil_hz = 0.0;
        int n_max = 0;
        double warn_fraction = 0.2;
        double noise = 0.0;
        int trials = 0;
        std::optional<std::uint64_t> seed;
    };
    auto o = std::make_shared<Opts>();
    auto* a = app.add_subcommand("kd-simulate", "Kapitza-Dirac populations and depth round trips");
    a->add_option("--depth", o->depths, "Depths in E_r; overrides the grid")->delimiter(',');
    a->add_option("--depth-min", o->depth_min, "Grid start, E_r")->check(CLI::NonNegativeNumber);
    a->add_option("--depth-max", o->depth_max, "Grid end, E_r");
    a->add_option("--points", o->points, "Grid points")->check(CLI::PositiveNumber);
    a->add_option("--pulse-us", o->pulse_us, "Effective pulse duration")->check(CLI::PositiveNumber);
    a->add_option("--wavelength-nm", o->wavelength_nm, "Lattice wavelength for the recoil energy");
    a->add_option("--recoil-hz", o->recoil_hz, "Recoil energy; 0 derives it from the wavelength")->check(CLI::NonNegativeNumber);
    a->add_option("--n-max", o->n_max, "Highest order; 0 picks it from the tail")->check(CLI::NonNegativeNumber);
    a->add_option("--warn-fraction", o->warn_fraction, "Raman-Nath warning fraction")->check(CLI::PositiveNumber);
    a->add_option("--noise", o->noise, "Relative population noise of the round trip")->check(CLI::NonNegativeNumber);
    a->add_option("--trials", o->trials, "Round-trip trials per depth; 0 skips them")->check(CLI::NonNegativeNumber);
    a->add_option("--seed", o->seed, "Seed, required with --trials");

    return {a, [o, a, &g] {
                if (o->trials > 0 && !o->seed) throw ValidationError("kd-simulate: round trips need --seed");
                if (o->trials > 0 && !(o->noise > 0.0)) throw ValidationError("kd-simulate: round trips need --noise > 0");
                const auto depths = o->depths.empty() ? linspace(o->depth_min, o->depth_max, o->points) : o->depths;
                json species = nullptr;
                double recoil = o->recoil_hz;
                if (recoil == 0.0) {
                    const auto sp = load_species(g, "file");
                    species = sp.provenance;
                    recoil = recoil_energy_hz(o->wavelength_nm, sp.data.mass_kg.value);
                }
                RecordSink sink("kd-simulate", config_digest(*a),
                                provenance(species, nullptr, o->trials > 0 ? o->seed : std::nullopt), g.output, g.csv);
                sink.csv_header({"depth_recoil", "phase", "order", "population"});
                for (std::size_t i = 0; i < depths.size(); ++i) {
                    const double v = depths[i];
                    if (!(v >= 0.0)) throw ValidationError("kd-simulate: depths must be >= 0");
                    const auto pop = diffraction_populations(v, o->pulse_us, recoil, o->n_max);
                    const double phase = kd_phase(v, o->pulse_us, recoil);
                    const auto rn = raman_nath_check(v, o->pulse_us, o->warn_fraction);
                    json p = json::object();
                    for (const auto& [n, pn] : pop.p) {
                        p[std::to_string(n)] = pn;
                        sink.csv_row({num(v), num(phase), std::to_string(n), num(pn)});
                    }
                    sink.record("kd_populations", {{"depth_recoil", v},
                                                   {"phase", phase},
                                                   {"recoil_hz", recoil},
                                                   {"populations", p},
                                                   {"raman_nath", {{"margin", rn.margin}, {"ok", rn.ok}}}});
                    if (o->trials > 0) {
                        const auto st = kd_round_trip_study(v, o->pulse_us, recoil, o->noise, o->trials,
                                                            stream_seed(*o->seed, i), g.jobs);
                        double mp = 0.0, mp2 = 0.0, me = 0.0;
                        for (std::size_t k = 0; k < st.pulls.size(); ++k) {
                            mp += st.pulls[k];
                            mp2 += st.pulls[k] * st.pulls[k];
                            me += st.estimates[k];
                        }
                        const double n = static_cast<double>(st.pulls.size());
                        sink.record("kd_round_trip", {{"depth_recoil", v},
                                                      {"noise", o->noise},
                                                      {"trials", o->trials},
                                                      {"mean_estimate", me / n},
                                                      {"mean_pull", mp / n},
                                                      {"pull_rms", std::sqrt(mp2 / n)},
                                                      {"fraction_within_3sigma", st.fraction_within_3sigma}});
                    }
                }
                sink.finish();
            }};
}

Command synth_data(CLI::App& app, Globals& g) {
    struct Opts {
        std::string out_dir;
        std::optional<std::uint64_t> seed;
        ExperimentSpec spec;
        std::string layout = "compact";
    };
    auto o = std::make_shared<Opts>();
    auto* a = app.add_subcommand("synth-data", "Synthetic Kapitza-Dirac wavelength scan as camera frames");
    a->add_option("--out-dir", o->out_dir, "Dataset directory")->required();
    a->add_option("--seed", o->seed, "Seed")->required();
    a->add_option("--injected-nm", o->spec.injected_tuneout_nm, "Injected m_F = 0 tune-out wavelength");
    a->add_option("--half-width-pm", o->spec.scan_half_width_pm, "Scan half width");
    a->add_option("--wavelengths", o->spec.wavelengths, "Scan wavelengths");
    a->add_option("--shots", o->spec.shots_per_wavelength, "Shots per wavelength");
    a->add_option("--intensity-W-m2", o->spec.intensity_W_m2, "Lattice beam intensity");
    a->add_option("--intensity-rms", o->spec.intensity_rms, "Relative shot-to-shot depth fluctuation");
    a->add_option("--pulse-us", o->spec.pulse_us, "Effective pulse duration");
    a->add_option("--references", o->spec.references, "Atom-free reference frames");
    a->add_option("--layout", o->layout, "Frame layout")->check(CLI::IsMember({"compact", "standard"}));

    return {a, [o, a, &g] {
                ExperimentSpec spec = o->spec;
                if (o->layout == "compact") spec.shot.layout = compact_layout();
                spec.validate();
                const auto sp = load_species(g, "file");
                const LatticeDepthModel model(sp.data, spec);
                const auto ds = synthesize_dataset(sp.data, spec, *o->seed, g.jobs);
                write_dataset(ds, o->out_dir);
                RecordSink sink("synth-data", config_digest(*a), provenance(sp.provenance, nullptr, o->seed), g.output, g.csv);
                sink.csv_header({"shot_id", "wavelength_nm", "depth_m-1", "depth_m0", "depth_m+1"});
                for (const auto& s : ds.shots) {
                    sink.record("synthetic_shot", {{"shot_id", s.shot_id}, {"wavelength_nm", s.wavelength_nm}, {"depth_recoil", s.depth_recoil}});
                    sink.csv_row({s.shot_id, num(s.wavelength_nm), num(s.depth_recoil[0]), num(s.depth_recoil[1]), num(s.depth_recoil[2])});
                }
                sink.record("dataset", {{"dir", o->out_dir},
                                        {"shots", ds.shots.size()},
                                        {"references", ds.references.size()},
                                        {"injected_nm", ds.injected_tuneout_nm},
                                        {"theory_root_nm", model.theory_root_nm()},
                                        {"shift_nm", model.shift_nm()},
                                        {"recoil_hz", ds.recoil_hz},
                                        {"pulse_us", ds.pulse_us}});
                sink.finish();
            }};
}

Command analyze_images(CLI::App& app, Globals& g) {
    struct Opts {
        std::string input;
        std::vector<int> bands{0};
        int depth_band = 0;
        double od_ceiling = 6.0;
        bool raw = false;
        int n_max = -1;
    };
    auto o = std::make_shared<Opts>();
    auto* a = app.add_subcommand("analyze-images", "Optical density, peak fits and lattice depths of a dataset");
    a->add_option("--input", o->input, "Dataset directory")->required();
    a->add_option("--bands", o->bands, "m_F bands to fit")->delimiter(',');
    a->add_option("--depth-band", o->depth_band, "m_F band whose populations give V0")->check(CLI::Range(-1, 1));
    a->add_option("--od-ceiling", o->od_ceiling, "OD ceiling for clamped pixels")->check(CLI::PositiveNumber);
    a->add_flag("--raw-reference", o->raw, "Use each shot's own reference instead of the composed one");
    a->add_option("--n-max", o->n_max, "Highest fitted order; -1 takes the layout value");

    return {a, [o, a, &g] {
                AnalysisOptions opt;
                opt.extraction.bands = {false, false, false};
                for (int b : o->bands) {
                    if (b < -1 || b > 1) throw ValidationError("analyze-images: bands are m_F = -1, 0 or 1");
                    opt.extraction.bands[static_cast<std::size_t>(b + 1)] = true;
                }
                if (!opt.extraction.bands[static_cast<std::size_t>(o->depth_band + 1)]) {
                    throw ValidationError("analyze-images: the depth band must be among --bands");
                }
                opt.extraction.n_max = o->n_max;
                opt.depth_band = o->depth_band;
                opt.od_ceiling = o->od_ceiling;
                opt.composed_reference = !o->raw;
                const std::filesystem::path dir(o->input);
                const auto ds = read_dataset(dir);
                const auto an = analyze_dataset(ds, opt, g.jobs);

                RecordSink sink("analyze-images", config_digest(*a), provenance(nullptr, json::array({input_entry(dir / "dataset.json")})),
                                g.output, g.csv);
                sink.csv_header({"shot_id", "control", "value", "sigma", "m_F", "shots", "snr_raw", "snr_composed", "error"});
                int failed = 0;
                int first_class = 0;
                for (const auto& s : an) {
                    json r{{"shot_id", s.shot_id},
                           {"wavelength_nm", s.wavelength_nm},
                           {"snr_raw", s.snr_raw},
                           {"snr_composed", s.snr_composed},
                           {"clamped_raw", s.clamped_raw},
                           {"clamped_composed", s.clamped_composed}};
                    if (s.depth) {
                        const auto& band = s.peaks.bands[static_cast<std::size_t>(o->depth_band + 1)];
                        json pop = json::object();
                        for (const auto& [n, p] : band.populations.p) {
                            pop[std::to_string(n)] = {{"p", p}, {"sigma", band.populations.sigma.at(n)}};
                        }
                        r["depth_recoil"] = s.depth->depth_recoil;
                        r["sigma_recoil"] = s.depth->sigma_recoil;
                        r["depth_chi2"] = s.depth->chi2;
                        r["depth_dof"] = s.depth->dof;
                        r["populations"] = pop;
                        r["thermal_split_identifiable"] = band.thermal_split_identifiable;
                    } else {
                        ++failed;
                        if (!first_class) first_class = s.error_class;
                        r["error"] = s.error;
                        r["error_class"] = s.error_class;
                    }
                    sink.record("shot_analysis", r);
                    sink.csv_row({s.shot_id, num(s.wavelength_nm), s.depth ? num(s.depth->depth_recoil) : "",
                                  s.depth ? num(s.depth->sigma_recoil) : "", std::to_string(o->depth_band), "1",
                                  num(s.snr_raw), num(s.snr_composed), csv_text(s.error)});
                }
                sink.record("analysis_summary", {{"shots", an.size()}, {"failed", failed}, {"depth_band", o->depth_band}});
                sink.finish();
                if (failed == static_cast<int>(an.size())) {
                    const std::string msg = "analyze-images: no shot could be analysed; first error: " + an.front().error;
                    if (first_class == 3) throw NonConvergenceError(msg);
                    if (first_class == 1) throw ValidationError(msg);
                    throw ComputationError(msg);
                }
            }};
}

Command fit_tuneout(CLI::App& app, Globals& g) {
    struct Opts {
        std::string input;
        int m_F = 0;
        int max_iterations = 200;
    };
    auto o = std::make_shared<Opts>();
    auto* a = app.add_subcommand("fit-tuneout", "Line fit |V0| = s |lambda - lambda_M| to a depth scan table");
    a->add_option("--input", o->input, "Scan table (control in nm, value and sigma in E_r)")->required();
    a->add_option("--m-F", o->m_F, "Rows of this sublevel are used");
    a->add_option("--max-iterations", o->max_iterations, "Fit iteration cap")->check(CLI::PositiveNumber);

    return {a, [o, a, &g] {
                std::vector<ScanPoint> pts;
                for (const auto& p : read_scan_table(o->input)) {
                    if (p.m_F == o->m_F) pts.push_back(p);
                }
                if (pts.empty()) throw ValidationError("empty input: no rows for m_F = " + std::to_string(o->m_F));
                WlsOptions solver;
                solver.max_iterations = o->max_iterations;
                const auto f = fit_tuneout_line(pts, solver);
                RecordSink sink("fit-tuneout", config_digest(*a), provenance(nullptr, json::array({input_entry(o->input)})),
                                g.output, g.csv);
                sink.csv_header({"lambda_m_nm", "lambda_m_sigma_nm", "slope_per_pm", "slope_sigma", "chi2", "dof", "points"});
                sink.record("tuneout_line_fit", {{"lambda_m_nm", f.lambda_m_nm},
                                                 {"lambda_m_sigma_nm", f.lambda_m_sigma_nm},
                                                 {"slope_per_pm", f.slope_per_pm},
                                                 {"slope_sigma", f.slope_sigma},
                                                 {"correlation", f.covariance(0, 1) / std::sqrt(f.covariance(0, 0) * f.covariance(1, 1))},
                                                 {"chi2", f.chi2},
                                                 {"dof", f.dof},
                                                 {"points", f.points}});
                sink.csv_row({num(f.lambda_m_nm), num(f.lambda_m_sigma_nm), num(f.slope_per_pm), num(f.slope_sigma),
                              num(f.chi2), std::to_string(f.dof), std::to_string(f.points)});
                sink.finish();
            }};
}

VectorConvention convention_of(const std::string& s) { return s == "f" ? VectorConvention::F : VectorConvention::HalfF; }

Command fit_polarization(CLI::App& app, Globals& g) {
    struct Opts {
        std::string input, scan_out;
        std::optional<std::uint64_t> seed;
        double lambda_m = 790.01858;
        std::string convention = "half-f";
        bool lambda_m_free = false;
        double lambda_m_sigma = 0.0;
        PolarizationTruth truth;
        double half_width_pm = 30.0;
        int points = 25;
        ScanNoise noise;
    };
    auto o = std::make_shared<Opts>();
    auto* a = app.add_subcommand("fit-polarization", "Joint m_F = +-1 fit of A0 and sigma_A");
    a->add_option("--input", o->input, "Scan table with m_F = +-1 rows; omit to synthesise one");
    a->add_option("--seed", o->seed, "Seed, required for a synthetic scan");
    a->add_option("--lambda-m-nm", o->lambda_m, "m_F = 0 tune-out wavelength");
    a->add_option("--convention", o->convention, "Vector weight m/(2F) or m/F")->check(CLI::IsMember({"half-f", "f"}));
    a->add_flag("--lambda-m-free", o->lambda_m_free, "Fit lambda_M under a Gaussian prior");
    a->add_option("--lambda-m-sigma-nm", o->lambda_m_sigma, "Prior width of lambda_M")->check(CLI::NonNegativeNumber);
    a->add_option("--A0", o->truth.A0, "Synthetic A0");
    a->add_option("--sigma-A", o->truth.sigma_A, "Synthetic sigma_A")->check(CLI::NonNegativeNumber);
    a->add_option("--slope", o->truth.slope_per_pm, "Synthetic m_F = 0 slope, E_r per pm")->check(CLI::PositiveNumber);
    a->add_option("--half-width-pm", o->half_width_pm, "Synthetic scan half width")->check(CLI::PositiveNumber);
    a->add_option("--points", o->points, "Synthetic scan points")->check(CLI::PositiveNumber);
    a->add_option("--noise-relative", o->noise.relative, "Synthetic relative noise")->check(CLI::NonNegativeNumber);
    a->add_option("--noise-floor", o->noise.floor, "Synthetic noise floor, E_r")->check(CLI::NonNegativeNumber);
    a->add_option("--scan-out", o->scan_out, "Write the synthetic scan table here");

    return {a, [o, a, &g] {
                const bool synthetic = o->input.empty();
                if (synthetic && !o->seed) throw ValidationError("fit-polarization: a synthetic scan needs --seed");
                const auto sp = load_species(g, "file");
                const FluctuatingPolarizationModel model(sp.data, o->lambda_m, convention_of(o->convention));
                std::vector<ScanPoint> pts;
                json inputs = nullptr;
                if (synthetic) {
                    const auto grid = linspace(o->lambda_m - 1e-3 * o->half_width_pm, o->lambda_m + 1e-3 * o->half_width_pm, o->points);
                    pts = synthesize_polarization_scan(model, o->truth, grid, o->noise, *o->seed);
                    if (!o->scan_out.empty()) write_scan_table(pts, o->scan_out);
                } else {
                    pts = read_scan_table(o->input);
                    inputs = json::array({input_entry(o->input)});
                }
                PolarizationFitOptions fopt;
                fopt.lambda_m_free = o->lambda_m_free;
                fopt.lambda_m_sigma_nm = o->lambda_m_sigma;
                const auto f = fit_polarization(pts, model, fopt);
                RecordSink sink("fit-polarization", config_digest(*a),
                                provenance(sp.provenance, inputs, synthetic ? o->seed : std::nullopt), g.output, g.csv);
                sink.csv_header({"parameter", "value", "sigma"});
                json r{{"A0", f.A0},
                       {"A0_sigma", f.A0_sigma},
                       {"sigma_A", f.sigma_A},
                       {"sigma_A_sigma", f.sigma_A_sigma},
                       {"sigma_A_at_bound", f.sigma_A_at_bound},
                       {"slope_per_pm", f.slope_per_pm},
                       {"slope_sigma", f.slope_sigma},
                       {"lambda_m_nm", f.lambda_m_nm},
                       {"lambda_m_sigma_nm", f.lambda_m_sigma},
                       {"lambda_m_free", f.lambda_m_free},
                       {"convention", to_string(f.convention)},
                       {"theta0_deg", 0.5 * std::asin(f.A0) * 180.0 / constants::pi},
                       {"chi2", f.chi2},
                       {"dof", f.dof},
                       {"points", pts.size()}};
                if (synthetic) r["truth"] = {{"A0", o->truth.A0}, {"sigma_A", o->truth.sigma_A}, {"slope_per_pm", o->truth.slope_per_pm}};
                sink.record("polarization_fit", r);
                sink.csv_row({"A0", num(f.A0), num(f.A0_sigma)});
                sink.csv_row({"sigma_A", num(f.sigma_A), num(f.sigma_A_sigma)});
                sink.csv_row({"slope_per_pm", num(f.slope_per_pm), num(f.slope_sigma)});
                sink.csv_row({"lambda_m_nm", num(f.lambda_m_nm), num(f.lambda_m_sigma)});
                sink.finish();
            }};
}

Command fit_bfield(CLI::App& app, Globals& g) {
    struct Opts {
        std::string z_scan, x_scan, y_scan, scan_out;
        std::optional<std::uint64_t> seed;
        double lambda_m = 790.01858;
        std::string convention = "half-f";
        double A0 = -7.80e-3, sigma_A = 4.78e-3, slope = 0.6;
        int m_F = 1;
        std::string mode = "sequential";
        std::vector<double> background{0.28, 0.11, -0.39};
        std::vector<double> z_range{-0.65, 1.35, 21}, x_range{-1.3, 0.8, 21}, y_range{-1.1, 0.9, 21};
        ScanNoise noise;
    };
    auto o = std::make_shared<Opts>();
    auto* a = app.add_subcommand("fit-bfield", "Background field from m_F = +-1 depth scans against applied fields");
    a->add_option("--z-scan", o->z_scan, "Scan table against applied B_z, G");
    a->add_option("--x-scan", o->x_scan, "Scan table against applied B_x, G");
    a->add_option("--y-scan", o->y_scan, "Optional validation scan against applied B_y, G");
    a->add_option("--seed", o->seed, "Seed, required for synthetic scans");
    a->add_option("--lambda-m-nm", o->lambda_m, "m_F = 0 tune-out wavelength");
    a->add_option("--convention", o->convention, "Vector weight m/(2F) or m/F")->check(CLI::IsMember({"half-f", "f"}));
    a->add_option("--A0", o->A0, "Polarisation A0");
    a->add_option("--sigma-A", o->sigma_A, "Polarisation fluctuation")->check(CLI::NonNegativeNumber);
    a->add_option("--slope", o->slope, "m_F = 0 slope, E_r per pm")->check(CLI::PositiveNumber);
    a->add_option("--m-F", o->m_F, "Probed sublevel")->check(CLI::IsMember({-1, 1}));
    a->add_option("--mode", o->mode, "Fit mode")->check(CLI::IsMember({"sequential", "global"}));
    a->add_option("--background", o->background, "Synthetic background field, G")->expected(3)->delimiter(',');
    a->add_option("--z-range", o->z_range, "Synthetic z grid: min, max, points")->expected(3)->delimiter(',');
    a->add_option("--x-range", o->x_range, "Synthetic x grid: min, max, points")->expected(3)->delimiter(',');
    a->add_option("--y-range", o->y_range, "Synthetic y grid: min, max, points")->expected(3)->delimiter(',');
    a->add_option("--noise-relative", o->noise.relative, "Synthetic relative noise")->check(CLI::NonNegativeNumber);
    a->add_option("--noise-floor", o->noise.floor, "Synthetic noise floor, E_r")->check(CLI::NonNegativeNumber);
    a->add_option("--scan-out", o->scan_out, "Prefix for the synthetic scan tables");

    return {a, [o, a, &g] {
                const bool synthetic = o->z_scan.empty() && o->x_scan.empty();
                if (!synthetic && (o->z_scan.empty() || o->x_scan.empty())) {
                    throw ValidationError("fit-bfield: give both --z-scan and --x-scan, or neither for synthetic scans");
                }
                if (synthetic && !o->seed) throw ValidationError("fit-bfield: synthetic scans need --seed");
                const auto sp = load_species(g, "file");
                const FluctuatingPolarizationModel model(sp.data, o->lambda_m, convention_of(o->convention));
                PolarizationFit pol;
                pol.A0 = o->A0;
                pol.sigma_A = o->sigma_A;
                pol.slope_per_pm = o->slope;
                pol.lambda_m_nm = o->lambda_m;
                pol.convention = model.convention();
                const VectorShiftModel vm(model, pol, o->m_F);
                FieldScans scans;
                json inputs = nullptr;
                if (synthetic) {
                    const Vec3d b0{o->background[0], o->background[1], o->background[2]};
                    const auto grid = [](const std::vector<double>& r) {
                        if (r[2] != std::round(r[2])) throw ValidationError("fit-bfield: grid point counts must be integers");
                        return linspace(r[0], r[1], static_cast<int>(r[2]));
                    };
                    scans.z = synthesize_field_scan(2, grid(o->z_range), b0, vm, o->noise, stream_seed(*o->seed, 2));
                    scans.x = synthesize_field_scan(0, grid(o->x_range), b0, vm, o->noise, stream_seed(*o->seed, 0));
                    scans.y = synthesize_field_scan(1, grid(o->y_range), b0, vm, o->noise, stream_seed(*o->seed, 1));
                    if (!o->scan_out.empty()) {
                        write_scan_table(scans.z, o->scan_out + "z.csv");
                        write_scan_table(scans.x, o->scan_out + "x.csv");
                        write_scan_table(scans.y, o->scan_out + "y.csv");
                    }
                } else {
                    scans.z = read_scan_table(o->z_scan);
                    scans.x = read_scan_table(o->x_scan);
                    inputs = json::array({input_entry(o->z_scan), input_entry(o->x_scan)});
                    if (!o->y_scan.empty()) {
                        scans.y = read_scan_table(o->y_scan);
                        inputs.push_back(input_entry(o->y_scan));
                    }
                }
                const auto f = fit_background_field(scans, vm, o->mode == "global" ? FieldFitMode::Global : FieldFitMode::Sequential);
                RecordSink sink("fit-bfield", config_digest(*a),
                                provenance(sp.provenance, inputs, synthetic ? o->seed : std::nullopt), g.output, g.csv);
                sink.csv_header({"component", "value_G", "sigma_G"});
                json r{{"B0_G", f.B0},
                       {"sigma_G", f.sigma},
                       {"mode", o->mode},
                       {"transverse_from_z_G", f.transverse_from_z},
                       {"transverse_from_z_sigma_G", f.transverse_from_z_sigma},
                       {"z_minimum_applied_G", -f.B0[2]},
                       {"chi2_z", f.chi2_z},
                       {"dof_z", f.dof_z},
                       {"chi2_x", f.chi2_x},
                       {"dof_x", f.dof_x},
                       {"y_sign_ambiguous", f.y_sign_ambiguous}};
                if (f.y_validation_chi2) {
                    r["y_validation_chi2"] = *f.y_validation_chi2;
                    r["y_validation_chi2_flipped"] = *f.y_validation_chi2_flipped;
                    r["dof_y"] = f.dof_y;
                }
                if (synthetic) r["truth_G"] = o->background;
                sink.record("background_field_fit", r);
                const char* names[] = {"Bx", "By", "Bz"};
                for (int i = 0; i < 3; ++i) sink.csv_row({names[i], num(f.B0[static_cast<std::size_t>(i)]), num(f.sigma[static_cast<std::size_t>(i)])});
                sink.finish();
            }};
}

}  // namespace

std::vector<Command> add_commands(CLI::App& app, Globals& g) {
    return {polarizability(app, g), tuneout_root(app, g),   kd_simulate(app, g),      synth_data(app, g),
            analyze_images(app, g), fit_tuneout(app, g),    fit_polarization(app, g), fit_bfield(app, g)};
}

}  // namespace tuneout::cli
