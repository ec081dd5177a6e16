#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowguide/checkpoint.hpp"
#include "flowguide/config.hpp"
#include "flowguide/datasets.hpp"
#include "flowguide/io.hpp"
#include "flowguide/metrics.hpp"
#include "flowguide/sampler.hpp"
#include "flowguide/svg.hpp"
#include "flowguide/trainer.hpp"

namespace flowguide {

namespace cli_detail {

inline std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("FLOWGUIDE_SEED");
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const std::uint64_t seed = std::strtoull(v, &end, 10);
    if (end == v || *end != '\0')
        throw std::runtime_error(std::string("FLOWGUIDE_SEED is not an integer: ") + v);
    return seed;
}

inline void apply_seed(Config& cfg, const std::optional<std::uint64_t>& cli_seed) {
    if (auto env = env_seed()) cfg.seed = *env;
    if (cli_seed) cfg.seed = *cli_seed;
}

inline std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// Integrate a batch with one prototype index per sample (-1 = unconditional),
// grouping rows by prototype so each group shares its CFG forwards.
inline Tensor sample_grouped(const TrainState& s, const std::vector<long long>& proto_of,
                             const Tensor& x_start, const SamplerConfig& cfg,
                             const ConditionInput& null_cond) {
    const std::size_t n = x_start.shape()[0];
    Tensor generated({n, 2});
    std::vector<long long> distinct;
    for (long long p : proto_of)
        if (std::find(distinct.begin(), distinct.end(), p) == distinct.end())
            distinct.push_back(p);
    std::sort(distinct.begin(), distinct.end());
    for (long long p : distinct) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i)
            if (proto_of[i] == p) members.push_back(i);
        Tensor xs({members.size(), 2});
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = 0; j < 2; ++j) xs(i, j) = x_start(members[i], j);
        IntegrationResult res =
            p < 0 ? integrate(s.params, xs, cfg, std::nullopt, null_cond)
                  : integrate(s.params, xs, cfg,
                              ConditionInput(PrototypeCond{row(s.protos.m, static_cast<std::size_t>(p))}),
                              null_cond);
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = 0; j < 2; ++j) generated(members[i], j) = res.samples(i, j);
    }
    return generated;
}

inline int cmd_train(const std::string& config_path, const std::string& out_dir,
                     const std::string& dataset_override, std::optional<std::uint64_t> seed,
                     std::optional<std::size_t> iters, std::optional<std::size_t> n_override,
                     const std::string& mode_override, const std::string& init_ckpt,
                     const std::string& labels_path) {
    Config cfg = load_config(config_path);
    if (!dataset_override.empty()) cfg.dataset = dataset_override;
    if (!mode_override.empty()) cfg.mode = mode_override;
    if (iters) cfg.total_iters = *iters;
    if (n_override) cfg.n = *n_override;
    apply_seed(cfg, seed);

    std::filesystem::create_directories(out_dir);
    const std::string metrics_path = out_dir + "/metrics.csv";
    const std::string ckpt_path = out_dir + "/final.ckpt";
    save_config(out_dir + "/config.txt", cfg);

    Dataset dataset = make_dataset(cfg.dataset, cfg.n, cfg.noise_std, cfg.seed);
    auto print_row = [](const MetricsRow& r) {
        std::cout << "iter=" << r.iter << " loss_d=" << format_double(r.loss_d)
                  << " loss_sk=" << format_double(r.loss_sk)
                  << " sk_weight=" << format_double(r.sk_weight)
                  << " nmi=" << format_double(r.nmi) << " ari=" << format_double(r.ari)
                  << " frechet=" << format_double(r.frechet) << "\n";
    };

    TrainState final_state = make_train_state(to_train_config(cfg));
    std::vector<MetricsRow> log;
    std::vector<std::size_t> histogram;
    if (cfg.mode == "offline") {
        if (init_ckpt.empty() || labels_path.empty())
            throw CLI::ValidationError("train", "offline mode requires --init-ckpt and --labels");
        Checkpoint pre = load_checkpoint(init_ckpt);
        for (const auto& [key, mismatch] :
             std::vector<std::pair<std::string, bool>>{
                 {"hidden_layers", pre.config.hidden_layers != cfg.hidden_layers},
                 {"hidden_width", pre.config.hidden_width != cfg.hidden_width},
                 {"feature_dim", pre.config.feature_dim != cfg.feature_dim},
                 {"time_freqs", pre.config.time_freqs != cfg.time_freqs}})
            if (mismatch)
                throw std::runtime_error("offline: config key '" + key +
                                         "' differs from the checkpoint's network");
        TrainState state = state_from_checkpoint(pre);
        state.cfg = to_train_config(cfg);
        Labeling labels = read_labels(labels_path);
        OfflineResult res = train_offline(std::move(state), dataset, labels, print_row);
        final_state = std::move(res.state);
        log = std::move(res.log);
        histogram = assignment_histogram(labels, cfg.clusters);
    } else {
        TrainResult res = run_training(to_train_config(cfg), dataset, print_row);
        final_state = std::move(res.state);
        log = std::move(res.log);
        Tensor data = final_state.standardization.apply(dataset.samples);
        EvalResult final_eval =
            evaluate(final_state, data, dataset.mode_labels, cfg.total_iters);
        histogram = final_eval.histogram;
    }

    write_metrics_csv(metrics_path, log);
    save_checkpoint(ckpt_path, checkpoint_from_state(final_state, cfg, histogram));
    std::cout << "wrote " << metrics_path << " and " << ckpt_path << "\n";
    return 0;
}

inline int cmd_sample(const std::string& ckpt_path, const std::string& out_path,
                      const std::string& svg_path, std::size_t n,
                      std::optional<std::size_t> steps, std::optional<double> guidance,
                      const std::string& method, std::optional<long long> prototype,
                      const std::string& query_file, bool unconditional,
                      std::optional<std::uint64_t> seed) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Config cfg = ckpt.config;
    apply_seed(cfg, seed);
    TrainState state = state_from_checkpoint(ckpt);

    SamplerConfig scfg;
    scfg.steps = steps ? *steps : cfg.sample_steps;
    scfg.guidance = guidance ? *guidance : cfg.guidance_strength;
    scfg.method = ode_method_from_name(method.empty() ? cfg.method : method);

    const bool model_is_unconditional = cfg.mode == "none";
    ConditionInput null_cond =
        model_is_unconditional ? ConditionInput(ZeroVector{}) : state.null_condition();

    Rng rng(cfg.seed, 0x5A11ull);
    std::vector<long long> proto_of(n, -1);
    if (prototype) {
        if (*prototype < 0 || static_cast<std::size_t>(*prototype) >= state.protos.count())
            throw std::runtime_error("prototype index " + std::to_string(*prototype) +
                                     " out of range [0, " + std::to_string(state.protos.count()) +
                                     ")");
        std::fill(proto_of.begin(), proto_of.end(), *prototype);
    } else if (!query_file.empty()) {
        CsvTable q = read_csv(query_file);
        if (q.rows.empty()) throw std::runtime_error("query file has no rows: " + query_file);
        Tensor query({2});
        query[0] = q.rows[0][q.column("x")];
        query[1] = q.rows[0][q.column("y")];
        // query lives in data space; move it into the standardized frame
        Tensor qrow({1, 2});
        qrow(0, 0) = query[0];
        qrow(0, 1) = query[1];
        Tensor std_q = state.standardization.apply(qrow);
        Tensor query_noise({2});
        query_noise[0] = rng.normal();
        query_noise[1] = rng.normal();
        Tensor x_start({n, 2});
        for (double& v : x_start.values()) v = rng.normal();
        QuerySampleResult res = sample_by_query(
            state.params, state.ema.shadow, state.head, state.protos, state.cfg.path,
            state.cfg.feature_t, state.cfg.feature_layer, row(std_q, 0), query_noise, x_start,
            scfg, null_cond);
        Tensor raw = state.standardization.invert(res.result.samples);
        std::fill(proto_of.begin(), proto_of.end(), static_cast<long long>(res.prototype_index));
        write_samples_csv(out_path, raw, proto_of);
        if (!svg_path.empty()) emit_scatter_svg(svg_path, raw, proto_of);
        std::cout << "query assigned to prototype " << res.prototype_index << "; wrote "
                  << out_path << "\n";
        return 0;
    } else if (!unconditional && !model_is_unconditional) {
        std::vector<double> dist = checkpoint_code_distribution(ckpt);
        double total = 0.0;
        for (double p : dist) total += p;
        for (std::size_t i = 0; i < n; ++i) {
            if (total <= 0.0) {
                proto_of[i] = static_cast<long long>(rng.index(state.protos.count()));
                continue;
            }
            const double u = rng.uniform();
            double acc = 0.0;
            std::size_t k = 0;
            for (; k + 1 < dist.size(); ++k) {
                acc += dist[k];
                if (u <= acc) break;
            }
            proto_of[i] = static_cast<long long>(k);
        }
    }

    Tensor x_start({n, 2});
    for (double& v : x_start.values()) v = rng.normal();
    Tensor samples = sample_grouped(state, proto_of, x_start, scfg, null_cond);
    Tensor raw = state.standardization.invert(samples);
    write_samples_csv(out_path, raw, proto_of);
    if (!svg_path.empty()) emit_scatter_svg(svg_path, raw, proto_of);
    std::cout << "wrote " << n << " samples to " << out_path << "\n";
    return 0;
}

inline int cmd_eval(const std::string& samples_path, const std::string& dataset_name,
                    std::size_t n, double noise_std, std::optional<std::uint64_t> seed) {
    Config cfg;
    cfg.dataset = dataset_name;
    cfg.n = n;
    cfg.noise_std = noise_std;
    apply_seed(cfg, seed);
    Dataset dataset = make_dataset(cfg.dataset, cfg.n, cfg.noise_std, cfg.seed);

    CsvTable table = read_csv(samples_path);
    const std::size_t xc = table.column("x"), yc = table.column("y");
    if (table.rows.empty()) throw std::runtime_error("samples file has no rows: " + samples_path);
    Tensor pts({table.rows.size(), 2});
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        pts(i, 0) = table.rows[i][xc];
        pts(i, 1) = table.rows[i][yc];
    }
    std::cout << "frechet = " << format_double(frechet_distance(pts, dataset.samples)) << "\n";

    bool have_labels = false;
    std::size_t pc = 0;
    for (std::size_t i = 0; i < table.header.size(); ++i)
        if (table.header[i] == "prototype") {
            have_labels = true;
            pc = i;
        }
    if (have_labels && table.rows.size() == dataset.mode_labels.size()) {
        Labeling sample_labels(table.rows.size());
        bool valid = true;
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            if (table.rows[i][pc] < 0) {
                valid = false;
                break;
            }
            sample_labels[i] = static_cast<std::size_t>(table.rows[i][pc]);
        }
        if (valid) {
            std::cout << "nmi = " << format_double(nmi(sample_labels, dataset.mode_labels)) << "\n";
            std::cout << "ari = " << format_double(ari(sample_labels, dataset.mode_labels)) << "\n";
        }
    }
    return 0;
}

inline int cmd_cluster(const std::string& ckpt_path, const std::string& out_path, std::size_t k,
                       std::size_t kmeans_iters, const std::string& dataset_override,
                       std::optional<std::size_t> n_override,
                       std::optional<std::uint64_t> seed) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Config cfg = ckpt.config;
    if (!dataset_override.empty()) cfg.dataset = dataset_override;
    if (n_override) cfg.n = *n_override;
    apply_seed(cfg, seed);
    TrainState state = state_from_checkpoint(ckpt);

    Dataset dataset = make_dataset(cfg.dataset, cfg.n, cfg.noise_std, cfg.seed);
    Tensor data = state.standardization.apply(dataset.samples);
    Rng rng(cfg.seed, 0xC157ull);
    Tensor features = extract_dataset_features(state.ema.shadow, state.head, state.cfg.path, data,
                                               state.cfg.feature_t, state.cfg.feature_layer, rng);
    KmeansResult km = kmeans(features, k, kmeans_iters, cfg.seed);
    write_labels(out_path, km.labels);
    std::vector<std::size_t> hist = assignment_histogram(km.labels, k);
    std::cout << "wrote " << km.labels.size() << " labels to " << out_path << " (histogram:";
    for (std::size_t c : hist) std::cout << " " << c;
    std::cout << ")\n";
    std::cout << "nmi vs modes = " << format_double(nmi(km.labels, dataset.mode_labels)) << "\n";
    return 0;
}

inline int cmd_plot(const std::string& csv_path, const std::string& out_path,
                    const std::string& columns) {
    CsvTable table = read_csv(csv_path);
    std::vector<std::string> cols = split_csv_list(columns);
    emit_line_chart_svg(out_path, table, cols);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"self-guided flow matching on 2-D synthetic data"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string config_path, out_dir, dataset_override, mode_override, init_ckpt, labels_path;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::size_t> train_iters, train_n;
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--dataset", dataset_override, "dataset override (ring8|moons|checkerboard)");
    train->add_option("--seed", train_seed, "seed override");
    train->add_option("--iters", train_iters, "total iterations override");
    train->add_option("--n", train_n, "dataset size override");
    train->add_option("--mode", mode_override, "mode override (bootstrap|none|offline)");
    train->add_option("--init-ckpt", init_ckpt, "pretrained checkpoint (offline mode)");
    train->add_option("--labels", labels_path, "cluster labels file (offline mode)");

    // sample
    auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
    std::string ckpt_path, sample_out = "samples.csv", sample_svg, method, query_file;
    std::size_t sample_n = 1024;
    std::optional<std::size_t> sample_steps;
    std::optional<double> sample_guidance;
    std::optional<long long> sample_proto;
    std::optional<std::uint64_t> sample_seed;
    bool unconditional = false;
    sample->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    sample->add_option("--out", sample_out, "output samples csv");
    sample->add_option("--svg", sample_svg, "optional scatter svg");
    sample->add_option("--n", sample_n, "number of samples");
    sample->add_option("--steps", sample_steps, "ODE steps");
    sample->add_option("--guidance", sample_guidance, "guidance strength g");
    sample->add_option("--method", method, "euler|heun");
    sample->add_option("--prototype", sample_proto, "condition on one prototype index");
    sample->add_option("--query-file", query_file, "condition on the nearest prototype of a query point (csv with x,y)");
    sample->add_flag("--unconditional", unconditional, "sample without guidance");
    sample->add_option("--seed", sample_seed, "seed override");

    // eval
    auto* eval = app.add_subcommand("eval", "compare a samples file against a dataset");
    std::string eval_samples, eval_dataset = "ring8";
    std::size_t eval_n = 8192;
    double eval_noise = 0.05;
    std::optional<std::uint64_t> eval_seed;
    eval->add_option("--samples", eval_samples, "samples csv")->required();
    eval->add_option("--dataset", eval_dataset, "dataset name");
    eval->add_option("--n", eval_n, "dataset size");
    eval->add_option("--noise-std", eval_noise, "dataset noise std");
    eval->add_option("--seed", eval_seed, "dataset seed");

    // cluster
    auto* cluster = app.add_subcommand("cluster", "k-means labels from extracted features");
    std::string cluster_ckpt, cluster_out = "labels.txt", cluster_dataset;
    std::size_t cluster_k = 8, cluster_iters = 50;
    std::optional<std::size_t> cluster_n;
    std::optional<std::uint64_t> cluster_seed;
    cluster->add_option("--ckpt", cluster_ckpt, "checkpoint file")->required();
    cluster->add_option("--out", cluster_out, "labels output file");
    cluster->add_option("--k", cluster_k, "cluster count");
    cluster->add_option("--kmeans-iters", cluster_iters, "Lloyd iterations");
    cluster->add_option("--dataset", cluster_dataset, "dataset override");
    cluster->add_option("--n", cluster_n, "dataset size override");
    cluster->add_option("--seed", cluster_seed, "seed override");

    // plot
    auto* plot = app.add_subcommand("plot", "render a metrics csv to an svg line chart");
    std::string plot_csv, plot_out = "metrics.svg", plot_columns = "loss_d,loss_sk,nmi,frechet";
    plot->add_option("--csv", plot_csv, "metrics csv")->required();
    plot->add_option("--out", plot_out, "output svg");
    plot->add_option("--columns", plot_columns, "comma-separated columns to plot");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*train)
            return cli_detail::cmd_train(config_path, out_dir, dataset_override, train_seed,
                                         train_iters, train_n, mode_override, init_ckpt,
                                         labels_path);
        if (*sample)
            return cli_detail::cmd_sample(ckpt_path, sample_out, sample_svg, sample_n,
                                          sample_steps, sample_guidance, method, sample_proto,
                                          query_file, unconditional, sample_seed);
        if (*eval) return cli_detail::cmd_eval(eval_samples, eval_dataset, eval_n, eval_noise, eval_seed);
        if (*cluster)
            return cli_detail::cmd_cluster(cluster_ckpt, cluster_out, cluster_k, cluster_iters,
                                           cluster_dataset, cluster_n, cluster_seed);
        if (*plot) return cli_detail::cmd_plot(plot_csv, plot_out, plot_columns);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace flowguide
