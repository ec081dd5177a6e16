#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace flowguide {

// Shortest decimal that parses back to the exact same double.
inline std::string format_double(double v) {
    char buf[40];
    for (int precision = 1; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

inline std::string format_size(std::size_t v) { return std::to_string(v); }

// Flat key-value run configuration with '#' comments. Unknown keys are
// rejected; render() is canonical so parse(render(c)) == c.
struct Config {
    std::string mode = "bootstrap";  // bootstrap | none | offline
    std::string dataset = "ring8";   // ring8 | moons | checkerboard
    std::size_t n = 8192;
    double noise_std = 0.05;
    std::uint64_t seed = 0;
    std::string path = "cv";  // vp | ve | cv
    double vp_beta = 10.0;
    double ve_alpha_max = 100.0;
    std::size_t total_iters = 20000;
    double warmup = 0.5;
    double p_drop = 0.15;
    std::size_t batch = 256;
    std::size_t clusters = 8;
    double sk_lambda = 200.0;
    std::size_t sk_iters = 3;
    double feature_t = 0.2;
    std::size_t feature_layer = 2;
    double sk_mask_lo = 0.15;
    double sk_mask_hi = 0.25;
    std::size_t hidden_layers = 4;
    std::size_t hidden_width = 256;
    std::size_t feature_dim = 16;
    std::size_t time_freqs = 16;
    double lr = 1e-3;
    double ema_decay = 0.999;
    std::size_t eval_interval = 1000;
    std::size_t eval_samples = 1024;
    std::size_t sample_steps = 50;
    double guidance_strength = 0.4;
    std::string method = "euler";  // euler | heun

    template <class F>
    void for_each_field(F&& f) {
        f("mode", mode);
        f("dataset", dataset);
        f("n", n);
        f("noise_std", noise_std);
        f("seed", seed);
        f("path", path);
        f("vp_beta", vp_beta);
        f("ve_alpha_max", ve_alpha_max);
        f("total_iters", total_iters);
        f("warmup", warmup);
        f("p_drop", p_drop);
        f("batch", batch);
        f("clusters", clusters);
        f("sk_lambda", sk_lambda);
        f("sk_iters", sk_iters);
        f("feature_t", feature_t);
        f("feature_layer", feature_layer);
        f("sk_mask_lo", sk_mask_lo);
        f("sk_mask_hi", sk_mask_hi);
        f("hidden_layers", hidden_layers);
        f("hidden_width", hidden_width);
        f("feature_dim", feature_dim);
        f("time_freqs", time_freqs);
        f("lr", lr);
        f("ema_decay", ema_decay);
        f("eval_interval", eval_interval);
        f("eval_samples", eval_samples);
        f("sample_steps", sample_steps);
        f("guidance_strength", guidance_strength);
        f("method", method);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline void parse_value(const std::string& key, const std::string& text, std::string& out) {
    if (text.empty()) throw std::runtime_error("config: empty value for key '" + key + "'");
    out = text;
}

inline void parse_value(const std::string& key, const std::string& text, double& out) {
    char* end = nullptr;
    out = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0')
        throw std::runtime_error("config: bad number '" + text + "' for key '" + key + "'");
}

template <class T>
    requires std::is_unsigned_v<T>
inline void parse_value(const std::string& key, const std::string& text, T& out) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(text.c_str(), &end, 10);
    if (end == text.c_str() || *end != '\0')
        throw std::runtime_error("config: bad integer '" + text + "' for key '" + key + "'");
    out = static_cast<T>(v);
}

inline std::string render_value(const std::string& v) { return v; }
inline std::string render_value(double v) { return format_double(v); }
template <class T>
    requires std::is_unsigned_v<T>
inline std::string render_value(T v) {
    return std::to_string(v);
}

}  // namespace detail

inline std::string render_config(const Config& config) {
    Config c = config;
    std::ostringstream os;
    c.for_each_field([&](const char* key, auto& field) {
        os << key << " = " << detail::render_value(field) << "\n";
    });
    return os.str();
}

inline Config parse_config(const std::string& text, const Config& defaults = Config{}) {
    Config c = defaults;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     " is not 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        bool matched = false;
        c.for_each_field([&](const char* name, auto& field) {
            if (!matched && key == name) {
                detail::parse_value(key, value, field);
                matched = true;
            }
        });
        if (!matched) throw std::runtime_error("config: unknown key '" + key + "'");
    }
    return c;
}

inline bool operator==(const Config& a, const Config& b) {
    return render_config(a) == render_config(b);
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config(os.str());
}

inline void save_config(const std::string& path, const Config& c) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    out << render_config(c);
    if (!out) throw std::runtime_error("failed writing config file: " + path);
}

}  // namespace flowguide
