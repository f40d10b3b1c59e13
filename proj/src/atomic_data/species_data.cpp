#include "tuneout/species_data.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tuneout/errors.hpp"
#include "tuneout/wigner.hpp"

namespace tuneout {
namespace {

constexpr const char* kHeader = "tuneout-species-data";
constexpr int kFormatVersion = 1;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& text, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::logic_error&) {
        throw ValidationError(where + ": not a number: '" + text + "'");
    }
    if (used != text.size() || !std::isfinite(v)) {
        throw ValidationError(where + ": not a number: '" + text + "'");
    }
    return v;
}

// "<value> [+/- <unc>] | <provenance>"
Datum parse_datum(const std::string& rest, const std::string& where) {
    const auto bar = rest.find('|');
    if (bar == std::string::npos || trim(rest.substr(bar + 1)).empty()) {
        throw ValidationError(where + ": missing provenance ('| source') for numeric datum");
    }
    Datum d;
    d.provenance = trim(rest.substr(bar + 1));
    const std::string numbers = trim(rest.substr(0, bar));
    const auto pm = numbers.find("+/-");
    d.text = trim(numbers.substr(0, pm));
    d.value = parse_number(d.text, where);
    if (pm != std::string::npos) {
        d.uncertainty_text = trim(numbers.substr(pm + 3));
        d.uncertainty = parse_number(d.uncertainty_text, where);
        if (d.uncertainty < 0.0) throw ValidationError(where + ": negative uncertainty");
    }
    return d;
}

std::string format_datum(const Datum& d) {
    std::string out = d.text;
    if (!d.uncertainty_text.empty()) out += " +/- " + d.uncertainty_text;
    out += " | " + d.provenance;
    return out;
}

std::vector<HalfInt> parse_halfint_list(const std::string& rest, const std::string& where) {
    std::vector<HalfInt> out;
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(HalfInt::parse(trim(item)));
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
    }
    return out;
}

struct Section {
    std::string kind;
    std::string label;
    int line_no = 0;
    std::vector<std::tuple<std::string, std::string, int>> entries;  // key, value, line
};

class SectionReader {
public:
    SectionReader(const Section& s, std::string source)
        : section_(s), source_(std::move(source)) {
        for (const auto& [k, v, ln] : s.entries) {
            if (values_.count(k)) {
                throw ValidationError(location(ln) + ": duplicate key '" + k + "'");
            }
            values_[k] = {v, ln};
        }
    }

    std::string location(int line) const {
        return source_ + ":" + std::to_string(line) + ": [" + name() + "]";
    }
    std::string name() const {
        return section_.label.empty() ? section_.kind : section_.kind + " " + section_.label;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string raw(const std::string& key) {
        auto it = values_.find(key);
        if (it == values_.end()) {
            throw ValidationError(location(section_.line_no) + ": missing mandatory field '" + key +
                                  "'");
        }
        used_.insert(key);
        return it->second.first;
    }
    std::string where(const std::string& key) const {
        auto it = values_.find(key);
        const int ln = it == values_.end() ? section_.line_no : it->second.second;
        return location(ln) + " field '" + key + "'";
    }
    Datum datum(const std::string& key) {
        const std::string v = raw(key);
        return parse_datum(v, where(key));
    }
    HalfInt halfint(const std::string& key) {
        const std::string v = raw(key);
        try {
            return HalfInt::parse(v);
        } catch (const ValidationError& e) {
            throw ValidationError(where(key) + ": " + e.what());
        }
    }
    void finish() const {
        for (const auto& [k, v] : values_) {
            if (!used_.count(k)) {
                throw ValidationError(location(v.second) + ": unknown field '" + k + "'");
            }
        }
    }

private:
    const Section& section_;
    std::string source_;
    std::map<std::string, std::pair<std::string, int>> values_;
    std::set<std::string> used_;
};

void require_positive(const Datum& d, const std::string& what) {
    if (!(d.value > 0.0)) throw ValidationError(what + " must be > 0 (got " + d.text + ")");
}

void validate(SpeciesData& data, const std::string& source) {
    require_positive(data.mass_kg, source + ": [species] mass_kg");
    if (data.nuclear_spin.twice() < 0) {
        throw ValidationError(source + ": [species] nuclear_spin must be >= 0");
    }
    for (const auto& level : data.levels) {
        if (level.J.twice() < 0) {
            throw ValidationError(source + ": [level " + level.label + "] J must be >= 0");
        }
        for (HalfInt F : level.F_levels) {
            if (!triangle(data.nuclear_spin, level.J, F)) {
                throw ValidationError(source + ": [level " + level.label + "] field 'F': F = " +
                                      F.str() + " violates |I - J| <= F <= I + J with I = " +
                                      data.nuclear_spin.str() + ", J = " + level.J.str());
            }
        }
    }
    for (const auto& line : data.lines) {
        const std::string where = source + ": [line " + line.label + "]";
        require_positive(line.frequency_Hz, where + " frequency_Hz");
        require_positive(line.reduced_dipole_au, where + " reduced_dipole_au");
        require_positive(line.linewidth_Hz, where + " linewidth_Hz");
        const int dj = std::abs((line.upper.J - line.lower.J).twice());
        if (dj > 2 || (line.upper.J.twice() == 0 && line.lower.J.twice() == 0)) {
            throw ValidationError(where + ": J = " + line.lower.J.str() + " -> J' = " +
                                  line.upper.J.str() + " is not dipole allowed");
        }
    }
    for (const char* required : {"D1", "D2"}) {
        bool found = false;
        for (const auto& l : data.lines) found = found || l.label == required;
        if (!found) {
            throw ValidationError(source + ": missing mandatory line '" + std::string(required) +
                                  "'");
        }
    }
    if (data.mode == MatrixElementMode::Ratio) {
        if (!data.ratio) {
            throw ValidationError(source + ": [matrix_elements] mode = ratio requires ratio_R");
        }
        require_positive(data.ratio->ratio, source + ": [matrix_elements] ratio_R");
        const auto& ref = data.line(data.ratio->reference_line);
        const auto& der = data.line(data.ratio->derived_line);
        if (ref.lower.label != der.lower.label) {
            throw ValidationError(source + ": [matrix_elements] ratio lines must share a lower level");
        }
    }
}

}  // namespace

Datum Datum::exact(double v, std::string provenance) {
    Datum d;
    d.value = v;
    std::ostringstream os;
    os.precision(17);
    os << v;
    d.text = os.str();
    d.provenance = std::move(provenance);
    return d;
}

void HyperfineState::validate() const {
    if (!triangle(I, J, F)) {
        throw ValidationError("hyperfine state violates |I - J| <= F <= I + J (I = " + I.str() +
                              ", J = " + J.str() + ", F = " + F.str() + ")");
    }
    if (abs(m_F) > F) {
        throw ValidationError("hyperfine state violates |m_F| <= F (F = " + F.str() +
                              ", m_F = " + m_F.str() + ")");
    }
    if (((F - m_F).twice() % 2) != 0) {
        throw ValidationError("F - m_F must be an integer (F = " + F.str() + ", m_F = " +
                              m_F.str() + ")");
    }
}

const TransitionLine& SpeciesData::line(const std::string& label) const {
    for (const auto& l : lines) {
        if (l.label == label) return l;
    }
    throw ValidationError("species '" + name + "' has no line '" + label + "'");
}

const ElectronicLevel& SpeciesData::level(const std::string& label) const {
    for (const auto& l : levels) {
        if (l.label == label) return l;
    }
    throw ValidationError("species '" + name + "' has no level '" + label + "'");
}

double SpeciesData::effective_dipole_au(const TransitionLine& l) const {
    if (mode == MatrixElementMode::Ratio && ratio && l.label == ratio->derived_line) {
        return line(ratio->reference_line).reduced_dipole_au.value / std::sqrt(ratio->ratio.value);
    }
    return l.reduced_dipole_au.value;
}

void SpeciesData::for_each_datum(
    const std::function<void(const std::string&, const Datum&)>& fn) const {
    fn("species.mass_kg", mass_kg);
    for (const auto& lv : levels) {
        fn("level." + lv.label + ".A_hfs_Hz", lv.A_hfs_Hz);
        fn("level." + lv.label + ".B_hfs_Hz", lv.B_hfs_Hz);
    }
    for (const auto& l : lines) {
        fn("line." + l.label + ".frequency_Hz", l.frequency_Hz);
        fn("line." + l.label + ".reduced_dipole_au", l.reduced_dipole_au);
        fn("line." + l.label + ".linewidth_Hz", l.linewidth_Hz);
    }
    fn("residual.alpha_5s6p_plus_au", alpha_higher_p_au);
    fn("residual.alpha_core_au", alpha_core_au);
    if (ratio) fn("matrix_elements.ratio_R", ratio->ratio);
}

namespace {

void shift(Datum& d, double sigmas) {
    d.value += sigmas * d.uncertainty;
    std::ostringstream os;
    os.precision(17);
    os << d.value;
    d.text = os.str();
}

void sync_line_levels(SpeciesData& s) {
    for (auto& l : s.lines) {
        l.lower = s.level(l.lower.label);
        l.upper = s.level(l.upper.label);
    }
}

}  // namespace

SpeciesData SpeciesData::perturbed(const std::string& datum_name, double sigmas) const {
    SpeciesData out = *this;
    bool found = false;
    auto touch = [&](const std::string& key, Datum& d) {
        if (key == datum_name) {
            shift(d, sigmas);
            found = true;
        }
    };
    touch("species.mass_kg", out.mass_kg);
    for (auto& lv : out.levels) {
        touch("level." + lv.label + ".A_hfs_Hz", lv.A_hfs_Hz);
        touch("level." + lv.label + ".B_hfs_Hz", lv.B_hfs_Hz);
    }
    for (auto& l : out.lines) {
        touch("line." + l.label + ".frequency_Hz", l.frequency_Hz);
        touch("line." + l.label + ".reduced_dipole_au", l.reduced_dipole_au);
        touch("line." + l.label + ".linewidth_Hz", l.linewidth_Hz);
    }
    touch("residual.alpha_5s6p_plus_au", out.alpha_higher_p_au);
    touch("residual.alpha_core_au", out.alpha_core_au);
    if (out.ratio) touch("matrix_elements.ratio_R", out.ratio->ratio);
    if (!found) throw ValidationError("unknown datum '" + datum_name + "'");
    sync_line_levels(out);
    return out;
}

SpeciesData SpeciesData::without_residuals() const {
    SpeciesData out = *this;
    out.alpha_higher_p_au = Datum::exact(0.0, "zeroed");
    out.alpha_core_au = Datum::exact(0.0, "zeroed");
    return out;
}

SpeciesData SpeciesData::with_mode(MatrixElementMode m) const {
    SpeciesData out = *this;
    out.mode = m;
    if (m == MatrixElementMode::Ratio && !out.ratio) {
        throw ValidationError("species '" + name + "' carries no dipole ratio");
    }
    return out;
}

SpeciesData parse_species_data(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string raw_line;
    int line_no = 0;
    bool header_seen = false;
    std::vector<Section> sections;

    while (std::getline(in, raw_line)) {
        ++line_no;
        const std::string line = trim(raw_line);
        if (line.empty() || line[0] == '#') continue;
        const std::string here = source + ":" + std::to_string(line_no);
        if (!header_seen) {
            std::istringstream hs(line);
            std::string magic;
            int version = 0;
            hs >> magic >> version;
            if (magic != kHeader) {
                throw ValidationError(here + ": expected header '" + std::string(kHeader) +
                                      " <version>'");
            }
            if (version != kFormatVersion) {
                throw ValidationError(here + ": unsupported format version " +
                                      std::to_string(version));
            }
            header_seen = true;
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') throw ValidationError(here + ": malformed section header");
            const std::string inner = trim(line.substr(1, line.size() - 2));
            const auto sp = inner.find(' ');
            Section s;
            s.kind = inner.substr(0, sp);
            s.label = sp == std::string::npos ? "" : trim(inner.substr(sp + 1));
            s.line_no = line_no;
            static const std::set<std::string> kinds{"species", "level", "line", "residual",
                                                     "matrix_elements"};
            if (!kinds.count(s.kind)) {
                throw ValidationError(here + ": unknown section '" + s.kind + "'");
            }
            if ((s.kind == "level" || s.kind == "line") && s.label.empty()) {
                throw ValidationError(here + ": section '" + s.kind + "' needs a label");
            }
            sections.push_back(std::move(s));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ValidationError(here + ": expected 'key = value'");
        if (sections.empty()) throw ValidationError(here + ": entry outside of any section");
        sections.back().entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
                                             line_no);
    }
    if (!header_seen) throw ValidationError(source + ": empty file or missing header");

    SpeciesData data;
    bool have_species = false;
    bool have_residual = false;

    // Levels first, so that lines can refer to them regardless of order.
    for (const auto& s : sections) {
        if (s.kind != "level") continue;
        SectionReader r(s, source);
        ElectronicLevel lv;
        lv.label = s.label;
        lv.n = static_cast<int>(parse_number(r.raw("n"), r.where("n")));
        lv.J = r.halfint("J");
        lv.A_hfs_Hz = r.datum("A_hfs_Hz");
        lv.B_hfs_Hz = r.datum("B_hfs_Hz");
        if (r.has("splitting_Hz")) lv.splitting_Hz = r.datum("splitting_Hz");
        if (r.has("F")) lv.F_levels = parse_halfint_list(r.raw("F"), r.where("F"));
        r.finish();
        for (const auto& other : data.levels) {
            if (other.label == lv.label) {
                throw ValidationError(r.location(s.line_no) + ": duplicate level");
            }
        }
        data.levels.push_back(std::move(lv));
    }

    for (const auto& s : sections) {
        SectionReader r(s, source);
        if (s.kind == "species") {
            if (have_species) throw ValidationError(r.location(s.line_no) + ": duplicate section");
            have_species = true;
            data.name = r.raw("name");
            data.mass_kg = r.datum("mass_kg");
            const std::string spin = r.raw("nuclear_spin");
            const auto bar = spin.find('|');
            if (bar == std::string::npos || trim(spin.substr(bar + 1)).empty()) {
                throw ValidationError(r.where("nuclear_spin") + ": missing provenance");
            }
            data.nuclear_spin = HalfInt::parse(trim(spin.substr(0, bar)));
            data.nuclear_spin_provenance = trim(spin.substr(bar + 1));
            r.finish();
        } else if (s.kind == "line") {
            TransitionLine l;
            l.label = s.label;
            const std::string lower = r.raw("lower");
            const std::string upper = r.raw("upper");
            for (const auto* label : {&lower, &upper}) {
                try {
                    (label == &lower ? l.lower : l.upper) = data.level(*label);
                } catch (const ValidationError&) {
                    throw ValidationError(r.where(label == &lower ? "lower" : "upper") +
                                          ": unknown level '" + *label + "'");
                }
            }
            l.frequency_Hz = r.datum("frequency_Hz");
            l.reduced_dipole_au = r.datum("reduced_dipole_au");
            l.linewidth_Hz = r.datum("linewidth_Hz");
            r.finish();
            data.lines.push_back(std::move(l));
        } else if (s.kind == "residual") {
            have_residual = true;
            data.alpha_higher_p_au = r.datum("alpha_5s6p_plus_au");
            data.alpha_core_au = r.datum("alpha_core_au");
            r.finish();
        } else if (s.kind == "matrix_elements") {
            const std::string mode = r.raw("mode");
            if (mode == "direct") {
                data.mode = MatrixElementMode::Direct;
            } else if (mode == "ratio") {
                data.mode = MatrixElementMode::Ratio;
            } else {
                throw ValidationError(r.where("mode") + ": expected 'direct' or 'ratio'");
            }
            if (r.has("ratio_R")) {
                DipoleRatio dr;
                dr.reference_line = r.raw("reference_line");
                dr.derived_line = r.raw("derived_line");
                dr.ratio = r.datum("ratio_R");
                data.ratio = std::move(dr);
            }
            r.finish();
        }
    }
    if (!have_species) throw ValidationError(source + ": missing [species] section");
    if (!have_residual) throw ValidationError(source + ": missing [residual] section");

    validate(data, source);
    return data;
}

SpeciesData load_species_data(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open species data file '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_species_data(buf.str(), path.string());
}

std::string serialize_species_data(const SpeciesData& data) {
    std::ostringstream out;
    out << kHeader << ' ' << kFormatVersion << "\n\n";
    out << "[species]\n";
    out << "name = " << data.name << '\n';
    out << "nuclear_spin = " << data.nuclear_spin.str() << " | " << data.nuclear_spin_provenance
        << '\n';
    out << "mass_kg = " << format_datum(data.mass_kg) << "\n\n";
    for (const auto& lv : data.levels) {
        out << "[level " << lv.label << "]\n";
        out << "n = " << lv.n << '\n';
        out << "J = " << lv.J.str() << '\n';
        if (!lv.F_levels.empty()) {
            out << "F = ";
            for (std::size_t i = 0; i < lv.F_levels.size(); ++i) {
                out << (i ? ", " : "") << lv.F_levels[i].str();
            }
            out << '\n';
        }
        out << "A_hfs_Hz = " << format_datum(lv.A_hfs_Hz) << '\n';
        out << "B_hfs_Hz = " << format_datum(lv.B_hfs_Hz) << '\n';
        if (lv.splitting_Hz) out << "splitting_Hz = " << format_datum(*lv.splitting_Hz) << '\n';
        out << '\n';
    }
    for (const auto& l : data.lines) {
        out << "[line " << l.label << "]\n";
        out << "lower = " << l.lower.label << '\n';
        out << "upper = " << l.upper.label << '\n';
        out << "frequency_Hz = " << format_datum(l.frequency_Hz) << '\n';
        out << "reduced_dipole_au = " << format_datum(l.reduced_dipole_au) << '\n';
        out << "linewidth_Hz = " << format_datum(l.linewidth_Hz) << "\n\n";
    }
    out << "[residual]\n";
    out << "alpha_5s6p_plus_au = " << format_datum(data.alpha_higher_p_au) << '\n';
    out << "alpha_core_au = " << format_datum(data.alpha_core_au) << "\n\n";
    out << "[matrix_elements]\n";
    out << "mode = " << (data.mode == MatrixElementMode::Ratio ? "ratio" : "direct") << '\n';
    if (data.ratio) {
        out << "reference_line = " << data.ratio->reference_line << '\n';
        out << "derived_line = " << data.ratio->derived_line << '\n';
        out << "ratio_R = " << format_datum(data.ratio->ratio) << '\n';
    }
    return out.str();
}

std::vector<HalfInt> hyperfine_levels(HalfInt I, HalfInt J) {
    std::vector<HalfInt> out;
    for (HalfInt F = abs(I - J); F <= I + J; F += 1) out.push_back(F);
    return out;
}

double hyperfine_level_energy(const ElectronicLevel& level, HalfInt I, HalfInt F) {
    const HalfInt J = level.J;
    if (!triangle(I, J, F)) {
        throw ValidationError("hyperfine energy: F = " + F.str() + " violates triangle rule with I = " +
                              I.str() + ", J = " + J.str());
    }
    const double i = I.value();
    const double j = J.value();
    const double f = F.value();
    const double K = f * (f + 1.0) - i * (i + 1.0) - j * (j + 1.0);
    double shift = 0.5 * level.A_hfs_Hz.value * K;
    if (I.twice() >= 2 && J.twice() >= 2 && level.B_hfs_Hz.value != 0.0) {
        shift += level.B_hfs_Hz.value *
                 (1.5 * K * (K + 1.0) - 2.0 * i * (i + 1.0) * j * (j + 1.0)) /
                 (4.0 * i * (2.0 * i - 1.0) * j * (2.0 * j - 1.0));
    }
    return shift;
}

double reduced_hf_matrix_element(const SpeciesData& data, const TransitionLine& line, HalfInt F,
                                 HalfInt F_prime) {
    const HalfInt I = data.nuclear_spin;
    const HalfInt J = line.lower.J;
    const HalfInt Jp = line.upper.J;
    if (!triangle(I, J, F) || !triangle(I, Jp, F_prime)) {
        throw ValidationError("reduced matrix element: F = " + F.str() + ", F' = " + F_prime.str() +
                              " violate the triangle rule for line " + line.label);
    }
    if (std::abs((F - F_prime).twice()) > 2) return 0.0;
    const int phase_twice = (Jp + I + F + 1).twice();
    const double sign = ((phase_twice / 2) % 2 == 0) ? 1.0 : -1.0;
    const double six = wigner_6j(Jp, F_prime, I, F, J, 1);
    return sign * std::sqrt((F.twice() + 1.0) * (F_prime.twice() + 1.0)) * six *
           data.effective_dipole_au(line);
}

}  // namespace tuneout
