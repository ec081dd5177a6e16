#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowguide/config.hpp"
#include "flowguide/tensor.hpp"
#include "flowguide/trainer.hpp"

namespace flowguide {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::runtime_error("csv: no column named '" + name + "'");
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv file: " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty csv file: " + path);
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<double> row;
        while (std::getline(ls, cell, ',')) {
            char* end = nullptr;
            row.push_back(std::strtod(cell.c_str(), &end));
            if (end == cell.c_str())
                throw std::runtime_error("csv: bad number '" + cell + "' in " + path);
        }
        if (row.size() != t.header.size())
            throw std::runtime_error("csv: ragged row in " + path);
        t.rows.push_back(std::move(row));
    }
    return t;
}

// Samples file: x,y,prototype. prototype is -1 for unconditional samples.
inline void write_samples_csv(const std::string& path, const Tensor& points,
                              const std::vector<long long>& prototype_ids) {
    if (points.rank() != 2 || points.shape()[1] != 2)
        throw std::runtime_error("write_samples_csv: need [Nx2] points");
    if (prototype_ids.size() != points.shape()[0])
        throw std::runtime_error("write_samples_csv: prototype id count mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write samples file: " + path);
    out << "x,y,prototype\n";
    for (std::size_t i = 0; i < points.shape()[0]; ++i)
        out << format_double(points(i, 0)) << "," << format_double(points(i, 1)) << ","
            << prototype_ids[i] << "\n";
    if (!out) throw std::runtime_error("failed writing samples file: " + path);
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics file: " + path);
    out << "iter,loss_d,loss_sk,sk_weight,nmi,ari,frechet\n";
    for (const MetricsRow& r : rows)
        out << r.iter << "," << format_double(r.loss_d) << "," << format_double(r.loss_sk) << ","
            << format_double(r.sk_weight) << "," << format_double(r.nmi) << ","
            << format_double(r.ari) << "," << format_double(r.frechet) << "\n";
    if (!out) throw std::runtime_error("failed writing metrics file: " + path);
}

// Labels file: one cluster id per line, '#' comments allowed.
inline void write_labels(const std::string& path, const std::vector<std::size_t>& labels) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write labels file: " + path);
    for (std::size_t v : labels) out << v << "\n";
    if (!out) throw std::runtime_error("failed writing labels file: " + path);
}

inline std::vector<std::size_t> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open labels file: " + path);
    std::vector<std::size_t> labels;
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        char* end = nullptr;
        const unsigned long long v = std::strtoull(line.c_str(), &end, 10);
        if (end == line.c_str() || *end != '\0')
            throw std::runtime_error("labels: bad entry '" + line + "' in " + path);
        labels.push_back(static_cast<std::size_t>(v));
    }
    return labels;
}

}  // namespace flowguide
