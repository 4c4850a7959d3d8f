#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixscreen/common.hpp"
#include "mixscreen/dictionary_fit.hpp"
#include "mixscreen/model.hpp"
#include "mixscreen/simulation.hpp"

namespace mixscreen {

inline constexpr const char* kArtifactVersion = "0.1.0";

using Json = nlohmann::ordered_json;

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline bool parse_double(const std::string& text, double& out) {
    if (text.empty()) return false;
    char* end = nullptr;
    out = std::strtod(text.c_str(), &end);
    return end == text.c_str() + text.size() && std::isfinite(out);
}

}  // namespace detail

// Dataset CSV layout: header row of group labels (first cell is the site-id
// column name), one row per site. '#' lines are metadata and skipped.
inline ScreeningDataset ingest_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        lines.push_back(line);
    }
    if (lines.empty()) throw DataError(path + ": empty file");

    const auto header = detail::split_csv_line(lines[0]);
    if (header.size() < 2) throw DataError(path + ": header must list group labels");
    const std::size_t n_subjects = header.size() - 1;
    std::vector<std::uint8_t> group(n_subjects);
    for (std::size_t j = 0; j < n_subjects; ++j) {
        const std::string& cell = header[j + 1];
        if (cell == "0") {
            group[j] = 0;
        } else if (cell == "1") {
            group[j] = 1;
        } else {
            throw DataError(path + ": header group label at sample column " + std::to_string(j + 1) +
                            " must be 0 or 1, got '" + cell + "'");
        }
    }

    if (lines.size() == 1) throw DataError(path + ": no sites");
    const std::size_t n_sites = lines.size() - 1;

    ScreeningDataset dataset;
    dataset.values = Matrix<double>(n_sites, n_subjects);
    dataset.group = group;
    dataset.site_ids.resize(n_sites);
    for (std::size_t m = 0; m < n_sites; ++m) {
        const auto cells = detail::split_csv_line(lines[m + 1]);
        if (cells.empty()) throw DataError(path + ": blank data row " + std::to_string(m + 1));
        const std::string& site_id = cells[0];
        if (cells.size() != n_subjects + 1) {
            throw DataError(path + ": site '" + site_id + "' has " + std::to_string(cells.size() - 1) +
                            " values, expected " + std::to_string(n_subjects));
        }
        dataset.site_ids[m] = site_id;
        for (std::size_t j = 0; j < n_subjects; ++j) {
            double x;
            if (!detail::parse_double(cells[j + 1], x)) {
                throw DataError(path + ": malformed value at site '" + site_id + "', sample column " +
                                std::to_string(j + 1));
            }
            if (!(x >= 0.0 && x <= 1.0)) {
                throw DataError(path + ": value " + cells[j + 1] + " out of [0,1] at site '" + site_id +
                                "', sample column " + std::to_string(j + 1));
            }
            dataset.values(m, j) = x;
        }
    }
    dataset.validate();
    return dataset;
}

struct OutputMeta {
    std::uint64_t seed = 0;
    std::string config_hash;

    std::string header() const {
        std::string out;
        out += "# version=" + std::string(kArtifactVersion) + "\n";
        out += "# seed=" + std::to_string(seed) + "\n";
        out += "# config_hash=" + config_hash + "\n";
        return out;
    }
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open output file: " + path);
    out << content;
}

inline void write_dataset_csv(const std::string& path, const ScreeningDataset& dataset,
                              const OutputMeta* meta = nullptr) {
    std::string out;
    if (meta != nullptr) out += meta->header();
    out += "site_id";
    for (auto g : dataset.group) out += g == 0 ? ",0" : ",1";
    out += "\n";
    for (std::size_t m = 0; m < dataset.n_sites(); ++m) {
        out += dataset.site_ids[m];
        for (std::size_t n = 0; n < dataset.n_subjects(); ++n) {
            out += "," + format_double(dataset.values(m, n));
        }
        out += "\n";
    }
    write_file(path, out);
}

// ---------------------------------------------------------------------------
// Dictionary JSON

inline Json dictionary_core_json(const KernelDictionary& dictionary) {
    Json kernels = Json::array();
    for (const auto& k : dictionary.kernels) {
        kernels.push_back(Json{{"mu", k.mu}, {"sigma", k.sigma}});
    }
    return Json{{"K", dictionary.size()}, {"kernels", kernels}, {"alpha", dictionary.alpha}};
}

inline std::string dictionary_hash(const KernelDictionary& dictionary) {
    return hex64(fnv1a64(dictionary_core_json(dictionary).dump()));
}

struct DictionaryMeta {
    std::uint64_t seed = 0;
    int iterations = 0;
    int burn_in = 0;
    std::size_t n_sites_used = 0;
    std::map<int, double> cv_table;
};

inline Json dictionary_to_json(const KernelDictionary& dictionary, const DictionaryMeta& meta) {
    Json doc = dictionary_core_json(dictionary);
    Json cv = Json::object();
    for (const auto& [k, score] : meta.cv_table) cv[std::to_string(k)] = score;
    doc["meta"] = Json{{"seed", meta.seed},
                       {"iterations", meta.iterations},
                       {"burn_in", meta.burn_in},
                       {"n_sites_used", meta.n_sites_used},
                       {"cv_table", cv}};
    return doc;
}

inline KernelDictionary dictionary_from_json(const Json& doc) {
    KernelDictionary dictionary;
    if (!doc.contains("kernels") || !doc.contains("alpha")) {
        throw DataError("dictionary JSON: missing kernels/alpha");
    }
    for (const auto& k : doc["kernels"]) {
        dictionary.kernels.push_back({k.at("mu").get<double>(), k.at("sigma").get<double>()});
    }
    dictionary.alpha = doc["alpha"].get<std::vector<double>>();
    if (doc.contains("K") && doc["K"].get<std::size_t>() != dictionary.size()) {
        throw DataError("dictionary JSON: K does not match kernel list");
    }
    dictionary.validate();
    return dictionary;
}

inline void write_dictionary_json(const std::string& path, const KernelDictionary& dictionary,
                                  const DictionaryMeta& meta) {
    write_file(path, dictionary_to_json(dictionary, meta).dump(2) + "\n");
}

inline KernelDictionary read_dictionary_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dictionary file: " + path);
    Json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw DataError("dictionary JSON parse error in " + path + ": " + e.what());
    }
    return dictionary_from_json(doc);
}

// ---------------------------------------------------------------------------
// Result writers

inline void write_screen_csv(const std::string& path, const ScreeningDataset& dataset,
                             const ScreeningResult& result, const OutputMeta& meta) {
    const std::size_t n_kernels = result.mean_weights0.cols();
    std::string out = meta.header();
    out += "site_id,post_h0";
    for (std::size_t k = 1; k <= n_kernels; ++k) out += ",mean_weight0_" + std::to_string(k);
    for (std::size_t k = 1; k <= n_kernels; ++k) out += ",mean_weight1_" + std::to_string(k);
    out += "\n";
    for (std::size_t m = 0; m < dataset.n_sites(); ++m) {
        out += dataset.site_ids[m] + "," + format_double(result.post_h0[m]);
        for (std::size_t k = 0; k < n_kernels; ++k) {
            out += "," + format_double(result.mean_weights0(m, k));
        }
        for (std::size_t k = 0; k < n_kernels; ++k) {
            out += "," + format_double(result.mean_weights1(m, k));
        }
        out += "\n";
    }
    write_file(path, out);
}

inline Json quantiles_json(std::vector<double> draws) {
    Json out = Json::object();
    if (draws.empty()) return out;
    std::sort(draws.begin(), draws.end());
    const auto at = [&](double q) {
        const double pos = q * static_cast<double>(draws.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, draws.size() - 1);
        const double t = pos - static_cast<double>(lo);
        return draws[lo] * (1.0 - t) + draws[hi] * t;
    };
    out["q025"] = at(0.025);
    out["q25"] = at(0.25);
    out["q50"] = at(0.50);
    out["q75"] = at(0.75);
    out["q975"] = at(0.975);
    return out;
}

inline void write_rate_study_csv(const std::string& path, const std::vector<RateStudyRow>& rows,
                                 const OutputMeta& meta) {
    std::string out = meta.header();
    out += "N,replicate,normalized_bf,regime\n";
    for (const auto& row : rows) {
        out += format_double(row.n) + "," + std::to_string(row.replicate) + "," +
               format_double(row.normalized_bf) + "," + (row.h0 ? "H0" : "H1") + "\n";
    }
    write_file(path, out);
}

inline void write_recovery_csv(const std::string& path, const std::vector<RecoveryRow>& rows,
                               const OutputMeta& meta) {
    std::string out = meta.header();
    out += "replicate,N,K,regime,tv_two_group,tv_separate,tv_common\n";
    for (const auto& row : rows) {
        out += std::to_string(row.replicate) + "," + format_double(row.n) + "," +
               std::to_string(row.k) + "," + (row.h0 ? "H0" : "H1") + "," +
               format_double(row.tv_two_group) + "," + format_double(row.tv_separate) + "," +
               format_double(row.tv_common) + "\n";
    }
    write_file(path, out);
}

inline void write_consistency_csv(const std::string& path,
                                  const std::vector<std::pair<std::string, ConsistencyStudyResult>>&
                                      scenarios,
                                  const OutputMeta& meta) {
    std::string out = meta.header();
    out += "scenario,N,replicate,post_h0,degenerate\n";
    for (const auto& [name, study] : scenarios) {
        for (const auto& row : study.rows) {
            out += name + "," + format_double(row.n) + "," + std::to_string(row.replicate) + "," +
                   format_double(row.post_h0) + "," + (study.degenerate ? "1" : "0") + "\n";
        }
    }
    write_file(path, out);
}

inline void write_permutation_csv(const std::string& path, const ScreeningDataset& dataset,
                                  const Matrix<double>& post_h0, const OutputMeta& meta) {
    std::string out = meta.header();
    out += "site_id";
    for (std::size_t p = 1; p <= post_h0.cols(); ++p) out += ",perm_" + std::to_string(p);
    out += "\n";
    for (std::size_t m = 0; m < post_h0.rows(); ++m) {
        out += dataset.site_ids[m];
        for (std::size_t p = 0; p < post_h0.cols(); ++p) {
            out += "," + format_double(post_h0(m, p));
        }
        out += "\n";
    }
    write_file(path, out);
}

inline void write_cv_table_csv(const std::string& path, const std::map<int, double>& table,
                               const OutputMeta& meta) {
    std::string out = meta.header();
    out += "K,mean_heldout_loglik\n";
    for (const auto& [k, score] : table) {
        out += std::to_string(k) + "," + format_double(score) + "\n";
    }
    write_file(path, out);
}

}  // namespace mixscreen
