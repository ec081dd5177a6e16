#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowguide/config.hpp"
#include "flowguide/tensor.hpp"
#include "flowguide/trainer.hpp"

namespace flowguide {

// Checkpoint file: "FGCP" magic, u32 format version, u64 metadata length,
// UTF-8 metadata ([config] snapshot, [state] iteration, [arrays] directory),
// then the arrays as little-endian 32-bit floats in directory order.
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Config config;
    std::uint64_t iteration = 0;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return &t;
        return nullptr;
    }

    const Tensor& require(const std::string& name) const {
        const Tensor* t = find(name);
        if (!t) throw std::runtime_error("checkpoint: missing array '" + name + "'");
        return *t;
    }
};

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    is.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream meta;
    meta << "[config]\n" << render_config(ckpt.config);
    meta << "[state]\niteration = " << ckpt.iteration << "\n";
    meta << "[arrays]\n";
    for (const auto& [name, t] : ckpt.arrays) {
        meta << name;
        for (std::size_t d : t.shape()) meta << " " << d;
        if (t.rank() == 0) meta << " 1";
        meta << "\n";
    }
    const std::string meta_str = meta.str();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write("FGCP", 4);
    detail::write_le<std::uint32_t>(out, kCheckpointVersion);
    detail::write_le<std::uint64_t>(out, meta_str.size());
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (const auto& [name, t] : ckpt.arrays)
        for (std::size_t i = 0; i < t.numel(); ++i)
            detail::write_le<float>(out, static_cast<float>(t[i]));
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "FGCP")
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = detail::read_le<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint version " + std::to_string(version) +
                                 " unsupported (expected " + std::to_string(kCheckpointVersion) +
                                 "): " + path);
    const std::uint64_t meta_len = detail::read_le<std::uint64_t>(in);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw std::runtime_error("truncated checkpoint metadata: " + path);

    Checkpoint ckpt;
    std::istringstream ms(meta);
    std::string line, section, config_text;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> directory;
    while (std::getline(ms, line)) {
        if (line == "[config]" || line == "[state]" || line == "[arrays]") {
            section = line;
            continue;
        }
        if (section == "[config]") {
            config_text += line + "\n";
        } else if (section == "[state]") {
            const std::size_t eq = line.find('=');
            if (eq != std::string::npos && detail::trim(line.substr(0, eq)) == "iteration")
                ckpt.iteration = std::strtoull(line.substr(eq + 1).c_str(), nullptr, 10);
        } else if (section == "[arrays]") {
            if (detail::trim(line).empty()) continue;
            std::istringstream ls(line);
            std::string name;
            ls >> name;
            std::vector<std::size_t> shape;
            std::size_t d;
            while (ls >> d) shape.push_back(d);
            directory.emplace_back(name, shape);
        }
    }
    ckpt.config = parse_config(config_text);

    for (const auto& [name, shape] : directory) {
        Tensor t(shape);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            t[i] = static_cast<double>(detail::read_le<float>(in));
            if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
        }
        ckpt.arrays.emplace_back(name, std::move(t));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// Bridges between the run configuration, training state and checkpoints.
// ---------------------------------------------------------------------------

inline TrainConfig to_train_config(const Config& c) {
    TrainConfig t;
    t.total_iters = c.total_iters;
    t.warmup = c.warmup;
    t.p_drop = c.p_drop;
    t.batch = c.batch;
    t.path = path_from_name(c.path, c.vp_beta, c.ve_alpha_max);
    t.sk.lambda = c.sk_lambda;
    t.sk.iters = static_cast<int>(c.sk_iters);
    t.feature_t = c.feature_t;
    t.feature_layer = c.feature_layer;
    t.sk_mask_lo = c.sk_mask_lo;
    t.sk_mask_hi = c.sk_mask_hi;
    t.seed = c.seed;
    t.clusters = c.clusters;
    t.feature_dim = c.feature_dim;
    t.hidden_layers = c.hidden_layers;
    t.hidden_width = c.hidden_width;
    t.time_freqs = c.time_freqs;
    t.lr = c.lr;
    t.ema_decay = c.ema_decay;
    t.mode = c.mode == "none" ? GuidanceMode::None : GuidanceMode::Bootstrap;
    t.eval_interval = c.eval_interval;
    t.eval_samples = c.eval_samples;
    t.sampler.steps = c.sample_steps;
    t.sampler.guidance = c.guidance_strength;
    t.sampler.method = ode_method_from_name(c.method);
    return t;
}

inline Checkpoint checkpoint_from_state(const TrainState& s, const Config& config,
                                        const std::vector<std::size_t>& code_histogram) {
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.iteration = s.iter;
    for (std::size_t l = 0; l < s.params.weights.size(); ++l) {
        ckpt.arrays.emplace_back("theta.w" + std::to_string(l), s.params.weights[l]);
        ckpt.arrays.emplace_back("theta.b" + std::to_string(l), s.params.biases[l]);
    }
    for (std::size_t l = 0; l < s.ema.shadow.weights.size(); ++l) {
        ckpt.arrays.emplace_back("ema.w" + std::to_string(l), s.ema.shadow.weights[l]);
        ckpt.arrays.emplace_back("ema.b" + std::to_string(l), s.ema.shadow.biases[l]);
    }
    ckpt.arrays.emplace_back("head.w", s.head.w);
    ckpt.arrays.emplace_back("head.b", s.head.b);
    ckpt.arrays.emplace_back("prototypes", s.protos.m);
    ckpt.arrays.emplace_back("null_embedding", s.null_embedding);
    ckpt.arrays.emplace_back("data_mean", s.standardization.mean);
    ckpt.arrays.emplace_back("data_std", s.standardization.std);
    Tensor hist({s.protos.count()});
    for (std::size_t k = 0; k < code_histogram.size() && k < hist.numel(); ++k)
        hist[k] = static_cast<double>(code_histogram[k]);
    ckpt.arrays.emplace_back("code_histogram", std::move(hist));
    return ckpt;
}

inline TrainState state_from_checkpoint(const Checkpoint& ckpt) {
    TrainState s = make_train_state(to_train_config(ckpt.config));
    auto assign = [&](Tensor& dst, const std::string& name) {
        const Tensor& src = ckpt.require(name);
        if (!dst.same_shape(src))
            throw std::runtime_error("checkpoint: array '" + name + "' has shape " +
                                     src.shape_str() + ", expected " + dst.shape_str());
        dst = src;
    };
    for (std::size_t l = 0; l < s.params.weights.size(); ++l) {
        assign(s.params.weights[l], "theta.w" + std::to_string(l));
        assign(s.params.biases[l], "theta.b" + std::to_string(l));
        assign(s.ema.shadow.weights[l], "ema.w" + std::to_string(l));
        assign(s.ema.shadow.biases[l], "ema.b" + std::to_string(l));
    }
    assign(s.head.w, "head.w");
    assign(s.head.b, "head.b");
    assign(s.protos.m, "prototypes");
    assign(s.null_embedding, "null_embedding");
    assign(s.standardization.mean, "data_mean");
    assign(s.standardization.std, "data_std");
    s.iter = ckpt.iteration;
    return s;
}

inline std::vector<double> checkpoint_code_distribution(const Checkpoint& ckpt) {
    const Tensor* hist = ckpt.find("code_histogram");
    if (!hist) return {};
    double total = 0.0;
    for (std::size_t i = 0; i < hist->numel(); ++i) total += (*hist)[i];
    std::vector<double> dist(hist->numel(), 0.0);
    if (total <= 0.0) return dist;
    for (std::size_t i = 0; i < hist->numel(); ++i) dist[i] = (*hist)[i] / total;
    return dist;
}

}  // namespace flowguide
