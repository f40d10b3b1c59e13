#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/imaging.hpp"

namespace tuneout {

const char* to_string(FrameRole r) { return r == FrameRole::Signal ? "signal" : "reference"; }

Frame::Frame(int w, int h, double fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw ValidationError("frame dimensions must be positive");
    pixels.assign(static_cast<std::size_t>(w) * h, fill);
}

void Frame::validate() const {
    if (width <= 0 || height <= 0) throw ValidationError("frame dimensions must be positive");
    if (pixels.size() != static_cast<std::size_t>(width) * height) {
        throw ValidationError("frame '" + shot_id + "' has " + std::to_string(pixels.size()) +
                              " pixels for " + std::to_string(width) + "x" +
                              std::to_string(height));
    }
    for (double v : pixels) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ValidationError("frame '" + shot_id + "' has a negative or non-finite pixel");
        }
    }
}

void write_frame(const Frame& frame, const std::string& path) {
    frame.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write frame " + path);
    out << "P5\n" << frame.width << ' ' << frame.height << "\n65535\n";
    std::vector<unsigned char> buf(frame.size() * 2);
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto v = static_cast<std::uint16_t>(std::clamp(std::round(frame.pixels[i]), 0.0, 65535.0));
        buf[2 * i] = static_cast<unsigned char>(v >> 8);
        buf[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ValidationError("short write on frame " + path);

    nlohmann::json meta = {{"shot_id", frame.shot_id},
                           {"role", to_string(frame.role)},
                           {"width", frame.width},
                           {"height", frame.height}};
    std::ofstream side(path + ".json");
    side << meta.dump(2) << '\n';
    if (!side) throw ValidationError("cannot write sidecar " + path + ".json");
}

namespace {

// Next header token of a PNM file, skipping whitespace and comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

}  // namespace

Frame read_frame(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open frame " + path);
    if (pnm_token(in) != "P5") throw ValidationError(path + " is not a binary PGM");
    int w = 0;
    int h = 0;
    int maxval = 0;
    try {
        w = std::stoi(pnm_token(in));
        h = std::stoi(pnm_token(in));
        maxval = std::stoi(pnm_token(in));
    } catch (const std::exception&) {
        throw ValidationError(path + ": malformed PGM header");
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
        throw ValidationError(path + ": unsupported PGM dimensions or depth");
    }
    Frame f(w, h);
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(f.size() * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
        throw ValidationError(path + ": truncated pixel data");
    }
    for (std::size_t i = 0; i < f.size(); ++i) {
        f.pixels[i] = bytes == 2 ? static_cast<double>((buf[2 * i] << 8) | buf[2 * i + 1])
                                 : static_cast<double>(buf[i]);
    }

    f.shot_id = std::filesystem::path(path).stem().string();
    std::ifstream side(path + ".json");
    if (side) {
        nlohmann::json meta;
        try {
            side >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ".json: " + e.what());
        }
        if (meta.value("width", w) != w || meta.value("height", h) != h) {
            throw ValidationError(path + ".json: dimensions disagree with the image");
        }
        f.shot_id = meta.value("shot_id", f.shot_id);
        const std::string role = meta.value("role", std::string("signal"));
        if (role == "signal") {
            f.role = FrameRole::Signal;
        } else if (role == "reference") {
            f.role = FrameRole::Reference;
        } else {
            throw ValidationError(path + ".json: unknown role '" + role + "'");
        }
    }
    return f;
}

bool Rect::overlaps(const Rect& o) const {
    return x0 < o.x0 + o.width && o.x0 < x0 + width && y0 < o.y0 + o.height && o.y0 < y0 + height;
}

void Rect::validate(int w, int h, const char* what) const {
    if (width <= 0 || height <= 0) {
        throw ValidationError(std::string(what) + " region is empty");
    }
    if (x0 < 0 || y0 < 0 || x0 + width > w || y0 + height > h) {
        std::ostringstream msg;
        msg << what << " region (" << x0 << ", " << y0 << ", " << width << "x" << height
            << ") leaves the " << w << "x" << h << " frame";
        throw ValidationError(msg.str());
    }
}

ODImage optical_density(const Frame& signal, const Frame& reference, double ceiling,
                        const std::string& reference_kind) {
    if (signal.width != reference.width || signal.height != reference.height) {
        throw ValidationError("signal and reference frames differ in size");
    }
    if (!(ceiling > 0.0)) throw ValidationError("OD ceiling must be positive");
    ODImage out;
    out.width = signal.width;
    out.height = signal.height;
    out.ceiling = ceiling;
    out.reference = reference_kind;
    out.od.resize(signal.size());
    out.valid.assign(signal.size(), 1);
    for (std::size_t i = 0; i < signal.size(); ++i) {
        const double s = signal.pixels[i];
        const double r = reference.pixels[i];
        double v = (s > 0.0 && r > 0.0) ? -std::log(s / r) : std::numeric_limits<double>::infinity();
        if (!(v <= ceiling)) {
            v = ceiling;
            out.valid[i] = 0;
            ++out.clamped;
        }
        out.od[i] = v;
    }
    return out;
}

double snr(const std::vector<double>& image, int width, int height, const Rect& signal,
           const Rect& background) {
    if (image.size() != static_cast<std::size_t>(width) * height) {
        throw ValidationError("snr: image size does not match its dimensions");
    }
    signal.validate(width, height, "snr signal");
    background.validate(width, height, "snr background");
    if (signal.overlaps(background)) throw ValidationError("snr: signal and background overlap");

    double s = 0.0;
    for (int y = signal.y0; y < signal.y0 + signal.height; ++y) {
        for (int x = signal.x0; x < signal.x0 + signal.width; ++x) s += image[y * width + x];
    }
    s /= static_cast<double>(signal.area());

    double mean = 0.0;
    for (int y = background.y0; y < background.y0 + background.height; ++y) {
        for (int x = background.x0; x < background.x0 + background.width; ++x) mean += image[y * width + x];
    }
    mean /= static_cast<double>(background.area());
    double var = 0.0;
    for (int y = background.y0; y < background.y0 + background.height; ++y) {
        for (int x = background.x0; x < background.x0 + background.width; ++x) {
            const double d = image[y * width + x] - mean;
            var += d * d;
        }
    }
    const double n = static_cast<double>(background.area());
    const double sd = n > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    if (sd == 0.0) return std::copysign(std::numeric_limits<double>::infinity(), s);
    return s / sd;
}

double snr(const ODImage& image, const Rect& signal, const Rect& background) {
    return snr(image.od, image.width, image.height, signal, background);
}

}  // namespace tuneout
