#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "smcgm/diagnostics.hpp"
#include "smcgm/io.hpp"
#include "smcgm/smc.hpp"

namespace smcgm {

namespace fs = std::filesystem;

struct ExperimentConfig {
    // [experiment]
    std::string name = "darcy-dense"; // multimodal1d | darcy-dense | darcy-sparse |
                                      // mesh-independence | conjugate-check
    std::string strategy = "pcn";     // rw | pcn | pcn-gm | gm
    std::size_t particles = 1000;
    std::uint64_t seed = 1;
    std::string out = "run-out";

    // [smc]
    int chain_len = 200;
    double beta0 = 0.2;
    double ess_threshold = 0.6;
    unsigned threads = 1;
    bool adapt = true;

    // [prior]
    int modes = 32; // per axis in 2D, total in 1D
    double alpha = 1.0;
    int power = 2;

    // [forward]
    int inverse_res = 32;
    int fine_res = 128;
    double source = 1.0;
    double noise_pct = 0.02;
    std::string obs = "dense10x10";
    double sigma = 0.25;         // multimodal likelihood width / conjugate noise
    std::uint64_t data_seed = 7; // truth draw and observation noise

    // [mixture]
    std::size_t components = 3;
    std::size_t k_fit = 20;
    std::size_t em_iter_cap = 200;
    double var_floor = 1e-4;
    bool bic_sweep = false;
    std::size_t m_max = 8;

    // [mesh] (mesh-independence only)
    std::vector<int> resolutions{16, 24, 32};

    int domain_dim() const {
        return (name == "multimodal1d" || name == "conjugate-check") ? 1 : 2;
    }

    FitConfig fit_config() const {
        FitConfig f;
        f.components = components;
        f.k_fit = k_fit;
        f.em_iter_cap = em_iter_cap;
        f.var_floor = var_floor;
        f.bic_sweep = bic_sweep;
        f.m_max = m_max;
        return f;
    }

    void validate() const {
        static const std::set<std::string> names{"multimodal1d", "darcy-dense", "darcy-sparse",
                                                 "mesh-independence", "conjugate-check"};
        if (!names.count(name)) throw config_error("unknown experiment '" + name + "'");
        parse_kernel(strategy);
        if (particles < 2) throw config_error("particles must be >= 2");
        if (chain_len < 0) throw config_error("chain_len must be >= 0");
        if (!(beta0 > 0 && beta0 <= 1)) throw config_error("beta0 must be in (0,1]");
        if (!(ess_threshold > 0 && ess_threshold < 1))
            throw config_error("ess_threshold must be in (0,1)");
        if (modes < 1) throw config_error("modes must be >= 1");
        if (!(alpha > 0)) throw config_error("alpha must be positive");
        if (power < 1) throw config_error("power must be >= 1");
        if (!(sigma > 0)) throw config_error("sigma must be positive");
        if (!(noise_pct >= 0)) throw config_error("noise_pct must be >= 0");
        if (name == "darcy-dense" || name == "darcy-sparse") {
            DarcyConfig d{inverse_res, fine_res, source};
            d.validate();
        }
        if (name == "mesh-independence") {
            if (resolutions.empty()) throw config_error("resolutions must not be empty");
            for (int r : resolutions)
                if (r < 8) throw config_error("resolutions must be >= 8");
        }
        if (components < 1) throw config_error("components must be >= 1");
        if (out.empty()) throw config_error("output directory must be set");
    }
};

// Experiment presets at desk scale; a config file overrides field by field.
inline ExperimentConfig default_config(const std::string& name) {
    ExperimentConfig c;
    c.name = name;
    if (name == "multimodal1d") {
        c.modes = 64;
        c.alpha = 0.01;
        c.particles = 2000;
        c.components = 8; // slack components keep the weak modes resolved
        c.k_fit = 6;
        c.sigma = 0.15;
        c.strategy = "gm";
    } else if (name == "darcy-dense") {
        c.modes = 32;
        c.alpha = 1.0;
        c.particles = 1000;
        c.components = 3;
        c.obs = "dense10x10";
    } else if (name == "darcy-sparse") {
        c.modes = 32;
        c.alpha = 1.0;
        c.particles = 600;
        c.components = 8;
        c.obs = "sparse-line20";
    } else if (name == "mesh-independence") {
        c.modes = 32; // truth field resolution; inversion modes track the mesh
        c.alpha = 1.0;
        c.particles = 300;
        c.chain_len = 25;
        c.components = 3;
        c.resolutions = {16, 24, 32};
    } else if (name == "conjugate-check") {
        c.modes = 3;
        c.alpha = 0.01;
        c.particles = 5000;
        c.chain_len = 20;
        c.sigma = 0.5;
        c.components = 1;
        c.k_fit = 3;
    } else {
        throw config_error("unknown experiment '" + name + "'");
    }
    return c;
}

// The paper's printed scales.
inline void apply_paper_scale(ExperimentConfig& c) {
    if (c.name == "multimodal1d") {
        c.particles = 20000;
    } else if (c.name == "darcy-dense") {
        c.inverse_res = 20;
        c.fine_res = 500;
        c.particles = 1000;
    } else if (c.name == "darcy-sparse") {
        c.inverse_res = 20;
        c.fine_res = 500;
        c.particles = (c.strategy == "gm") ? 60000 : 6000;
    } else if (c.name == "mesh-independence") {
        c.resolutions = {20, 40, 60, 80, 100};
    }
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw config_error(key + ": not a number: '" + v + "'");
    }
}

inline long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw config_error(key + ": not an integer: '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw config_error(key + ": not a boolean: '" + v + "'");
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<int>(to_long(key, trim(item))));
    return out;
}

} // namespace detail

// Flat sections of key = value pairs; '#' and ';' start comments.
// Unknown sections or keys are rejected.
inline std::map<std::string, std::string> parse_config_pairs(const std::string& text) {
    std::map<std::string, std::string> pairs;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error("config line " + std::to_string(lineno) + ": bad section");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty() || key.empty())
            throw config_error("config line " + std::to_string(lineno) + ": key outside section");
        if (!pairs.emplace(section + "." + key, value).second)
            throw config_error("duplicate config key " + section + "." + key);
    }
    return pairs;
}

inline void apply_config_pair(ExperimentConfig& c, const std::string& key,
                              const std::string& value) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_int_list;
    using detail::to_long;
    if (key == "experiment.name") c.name = value;
    else if (key == "experiment.strategy") c.strategy = value;
    else if (key == "experiment.particles") c.particles = static_cast<std::size_t>(to_long(key, value));
    else if (key == "experiment.seed") c.seed = static_cast<std::uint64_t>(to_long(key, value));
    else if (key == "experiment.out") c.out = value;
    else if (key == "smc.chain_len") c.chain_len = static_cast<int>(to_long(key, value));
    else if (key == "smc.beta0") c.beta0 = to_double(key, value);
    else if (key == "smc.ess_threshold") c.ess_threshold = to_double(key, value);
    else if (key == "smc.threads") c.threads = static_cast<unsigned>(to_long(key, value));
    else if (key == "smc.adapt") c.adapt = to_bool(key, value);
    else if (key == "prior.modes") c.modes = static_cast<int>(to_long(key, value));
    else if (key == "prior.alpha") c.alpha = to_double(key, value);
    else if (key == "prior.power") c.power = static_cast<int>(to_long(key, value));
    else if (key == "forward.inverse_res") c.inverse_res = static_cast<int>(to_long(key, value));
    else if (key == "forward.fine_res") c.fine_res = static_cast<int>(to_long(key, value));
    else if (key == "forward.source") c.source = to_double(key, value);
    else if (key == "forward.noise_pct") c.noise_pct = to_double(key, value);
    else if (key == "forward.obs") c.obs = value;
    else if (key == "forward.sigma") c.sigma = to_double(key, value);
    else if (key == "forward.data_seed") c.data_seed = static_cast<std::uint64_t>(to_long(key, value));
    else if (key == "mixture.components") c.components = static_cast<std::size_t>(to_long(key, value));
    else if (key == "mixture.k_fit") c.k_fit = static_cast<std::size_t>(to_long(key, value));
    else if (key == "mixture.em_iter_cap") c.em_iter_cap = static_cast<std::size_t>(to_long(key, value));
    else if (key == "mixture.var_floor") c.var_floor = to_double(key, value);
    else if (key == "mixture.bic_sweep") c.bic_sweep = to_bool(key, value);
    else if (key == "mixture.m_max") c.m_max = static_cast<std::size_t>(to_long(key, value));
    else if (key == "mesh.resolutions") c.resolutions = to_int_list(key, value);
    else throw config_error("unknown config key '" + key + "'");
}

inline ExperimentConfig config_from_pairs(const std::map<std::string, std::string>& pairs) {
    const auto it = pairs.find("experiment.name");
    if (it == pairs.end()) throw config_error("config missing experiment.name");
    ExperimentConfig c = default_config(it->second);
    for (const auto& [key, value] : pairs) apply_config_pair(c, key, value);
    return c;
}

inline ExperimentConfig load_config_file(const fs::path& path) {
    return config_from_pairs(parse_config_pairs(read_text(path)));
}

inline json config_to_json(const ExperimentConfig& c) {
    return json{{"experiment",
                 {{"name", c.name},
                  {"strategy", c.strategy},
                  {"particles", c.particles},
                  {"seed", c.seed},
                  {"out", c.out}}},
                {"smc",
                 {{"chain_len", c.chain_len},
                  {"beta0", c.beta0},
                  {"ess_threshold", c.ess_threshold},
                  {"threads", c.threads},
                  {"adapt", c.adapt}}},
                {"prior", {{"modes", c.modes}, {"alpha", c.alpha}, {"power", c.power}}},
                {"forward",
                 {{"inverse_res", c.inverse_res},
                  {"fine_res", c.fine_res},
                  {"source", c.source},
                  {"noise_pct", c.noise_pct},
                  {"obs", c.obs},
                  {"sigma", c.sigma},
                  {"data_seed", c.data_seed}}},
                {"mixture",
                 {{"components", c.components},
                  {"k_fit", c.k_fit},
                  {"em_iter_cap", c.em_iter_cap},
                  {"var_floor", c.var_floor},
                  {"bic_sweep", c.bic_sweep},
                  {"m_max", c.m_max}}},
                {"mesh", {{"resolutions", c.resolutions}}}};
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c = default_config(j.at("experiment").at("name").get<std::string>());
    const auto& e = j.at("experiment");
    c.strategy = e.at("strategy").get<std::string>();
    c.particles = e.at("particles").get<std::size_t>();
    c.seed = e.at("seed").get<std::uint64_t>();
    c.out = e.at("out").get<std::string>();
    const auto& s = j.at("smc");
    c.chain_len = s.at("chain_len").get<int>();
    c.beta0 = s.at("beta0").get<double>();
    c.ess_threshold = s.at("ess_threshold").get<double>();
    c.threads = s.at("threads").get<unsigned>();
    c.adapt = s.at("adapt").get<bool>();
    const auto& p = j.at("prior");
    c.modes = p.at("modes").get<int>();
    c.alpha = p.at("alpha").get<double>();
    c.power = p.at("power").get<int>();
    const auto& f = j.at("forward");
    c.inverse_res = f.at("inverse_res").get<int>();
    c.fine_res = f.at("fine_res").get<int>();
    c.source = f.at("source").get<double>();
    c.noise_pct = f.at("noise_pct").get<double>();
    c.obs = f.at("obs").get<std::string>();
    c.sigma = f.at("sigma").get<double>();
    c.data_seed = f.at("data_seed").get<std::uint64_t>();
    const auto& m = j.at("mixture");
    c.components = m.at("components").get<std::size_t>();
    c.k_fit = m.at("k_fit").get<std::size_t>();
    c.em_iter_cap = m.at("em_iter_cap").get<std::size_t>();
    c.var_floor = m.at("var_floor").get<double>();
    c.bic_sweep = m.at("bic_sweep").get<bool>();
    c.m_max = m.at("m_max").get<std::size_t>();
    c.resolutions = j.at("mesh").at("resolutions").get<std::vector<int>>();
    return c;
}

inline std::string config_hash(const ExperimentConfig& c) {
    return hash_hex(config_to_json(c).dump());
}

// ---------------------------------------------------------------------------
// artifacts

inline void write_ensemble_csv(const fs::path& path, const ParticleEnsemble& ens) {
    CsvWriter csv(path);
    const std::size_t K = ens.particles.front().coeff.size();
    std::vector<std::string> header;
    header.reserve(K);
    for (std::size_t k = 0; k < K; ++k) header.push_back("c" + std::to_string(k));
    csv.header(header);
    for (const auto& p : ens.particles) csv.row(p.coeff);
}

inline std::vector<std::vector<double>> read_ensemble_csv(const fs::path& path) {
    const auto rows = read_csv(path);
    if (rows.size() < 2) throw config_error(path.string() + ": empty ensemble");
    std::vector<std::vector<double>> out;
    out.reserve(rows.size() - 1);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::vector<double> r;
        r.reserve(rows[i].size());
        for (const auto& f : rows[i]) r.push_back(std::stod(f));
        out.push_back(std::move(r));
    }
    return out;
}

inline void write_runlog(const fs::path& path, const TemperSchedule& schedule) {
    std::string out;
    for (const auto& l : schedule.layers) {
        json rec{{"layer", l.layer},          {"h", l.h},
                 {"h_cum", l.h_cum},          {"ess", l.ess},
                 {"accept_rate", l.accept_rate}, {"beta", l.beta},
                 {"solves_cum", l.solves_cum},   {"wall_ms", l.wall_ms}};
        out += rec.dump() + "\n";
    }
    write_text(path, out);
}

inline void write_observation(const fs::path& dir, const ObservationSetup& obs,
                              const ExperimentConfig& cfg) {
    CsvWriter csv(dir / "data.csv");
    const std::vector<std::string> header{"x", "y", "value"};
    csv.header(header);
    for (std::size_t i = 0; i < obs.points.size(); ++i)
        csv.row(std::vector<double>{obs.points[i][0], obs.points[i][1], obs.data[i]});
    write_json(dir / "data.json", json{{"sigma", obs.sigma},
                                       {"noise_pct", cfg.noise_pct},
                                       {"data_seed", cfg.data_seed},
                                       {"fine_res", cfg.fine_res},
                                       {"inverse_res", cfg.inverse_res},
                                       {"obs", cfg.obs},
                                       {"n_points", obs.points.size()}});
}

inline ObservationSetup read_observation(const fs::path& dir) {
    const auto meta = read_json(dir / "data.json");
    const auto rows = read_csv(dir / "data.csv");
    ObservationSetup obs;
    obs.sigma = meta.at("sigma").get<double>();
    for (std::size_t i = 1; i < rows.size(); ++i) {
        obs.points.push_back({std::stod(rows[i][0]), std::stod(rows[i][1])});
        obs.data.push_back(std::stod(rows[i][2]));
    }
    obs.validate();
    return obs;
}

struct ExperimentResult {
    ExperimentConfig config;
    SmcResult smc;
    json summary;
};

namespace detail {

inline CoeffField ensemble_mean(const ParticleEnsemble& ens) {
    auto mean = CoeffField::zero(ens.particles.front().basis);
    for (const auto& p : ens.particles)
        for (std::size_t k = 0; k < mean.coeff.size(); ++k) mean.coeff[k] += p.coeff[k];
    for (double& c : mean.coeff) c /= static_cast<double>(ens.size());
    return mean;
}

inline void write_marginals(const fs::path& path, const ParticleEnsemble& ens,
                            std::size_t n_modes) {
    CsvWriter csv(path);
    const std::vector<std::string> header{"mode", "x", "density"};
    csv.header(header);
    const std::size_t K = std::min(n_modes, ens.particles.front().coeff.size());
    std::vector<double> samples(ens.size());
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < ens.size(); ++i) samples[i] = ens.particles[i].coeff[k];
        const auto d = kde_marginal(samples, kde_grid(samples), k);
        for (std::size_t i = 0; i < d.grid.size(); ++i)
            csv.row(std::vector<double>{static_cast<double>(k), d.grid[i], d.density[i]});
    }
}

inline void write_clusters(const fs::path& path, const ClusterReport& rep) {
    CsvWriter csv(path);
    std::vector<std::string> header{"cluster", "count", "data_misfit"};
    const std::size_t K = rep.clusters.empty() ? 0 : rep.clusters.front().mean.coeff.size();
    for (std::size_t k = 0; k < K; ++k) header.push_back("c" + std::to_string(k));
    csv.header(header);
    for (std::size_t j = 0; j < rep.clusters.size(); ++j) {
        std::vector<double> row{static_cast<double>(j),
                                static_cast<double>(rep.clusters[j].count),
                                rep.clusters[j].data_misfit};
        row.insert(row.end(), rep.clusters[j].mean.coeff.begin(),
                   rep.clusters[j].mean.coeff.end());
        csv.row(row);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// experiment drivers

inline ExperimentResult run_experiment(ExperimentConfig cfg) {
    cfg.validate();
    const fs::path dir(cfg.out);
    fs::create_directories(dir);

    SmcConfig smc;
    smc.strategy = parse_kernel(cfg.strategy);
    smc.n_particles = cfg.particles;
    smc.chain_len = cfg.chain_len;
    smc.beta0 = cfg.beta0;
    smc.ess_threshold = cfg.ess_threshold;
    smc.seed = cfg.seed;
    smc.threads = cfg.threads;
    smc.adapt = cfg.adapt;
    smc.fit = cfg.fit_config();

    ExperimentResult result;
    json summary{{"experiment", cfg.name}, {"strategy", cfg.strategy}, {"seed", cfg.seed}};

    if (cfg.name == "multimodal1d") {
        auto [basis, spec] = make_prior_basis(1, cfg.modes, cfg.alpha, cfg.power);
        auto modals = four_modals(basis);
        smc.prior = spec;
        smc.fit.k_fit = std::min<std::size_t>(smc.fit.k_fit, basis->num_modes());
        smc.potential = std::make_shared<MultimodalPotential>(modals, cfg.sigma);
        result.smc = run_smc(smc);

        // known ground truth for this example: four posterior modes
        auto rep = kmeans_cluster(result.smc.ensemble.particles, modals.size(), smc.fit.k_fit,
                                  cfg.seed + 1);
        json clusters = json::array();
        for (const auto& c : rep.clusters) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t i = 0; i < modals.size(); ++i) {
                const double d = l2_distance(c.mean, modals[i]);
                if (d < best) {
                    best = d;
                    arg = i;
                }
            }
            clusters.push_back(json{{"count", c.count},
                                    {"nearest_modal", arg},
                                    {"l2_to_nearest", best}});
        }
        summary["clusters"] = clusters;
        summary["n_modal"] = rep.n_modal();
        summary["sigma"] = cfg.sigma;
        detail::write_clusters(dir / "clusters.csv", rep);
        detail::write_marginals(dir / "marginals.csv", result.smc.ensemble,
                                std::min<std::size_t>(8, basis->num_modes()));
    } else if (cfg.name == "darcy-dense" || cfg.name == "darcy-sparse") {
        auto [basis, spec] = make_prior_basis(2, cfg.modes, cfg.alpha, cfg.power);
        RngStream truth_rng(cfg.data_seed, {11});
        auto truth = sample_prior(spec, truth_rng);
        DarcyConfig dcfg{cfg.inverse_res, cfg.fine_res, cfg.source};
        RngStream noise_rng(cfg.data_seed, {12});
        auto obsv = synthesize_data(truth, dcfg, measurement_grid(cfg.obs), cfg.noise_pct,
                                    noise_rng);
        write_observation(dir, obsv, cfg);
        {
            CsvWriter csv(dir / "truth.csv");
            std::vector<std::string> header;
            for (std::size_t k = 0; k < truth.coeff.size(); ++k)
                header.push_back("c" + std::to_string(k));
            csv.header(header);
            csv.row(truth.coeff);
        }

        auto pot = std::make_shared<DarcyPotential>(basis, dcfg, obsv);
        smc.prior = spec;
        smc.fit.k_fit = std::min<std::size_t>(smc.fit.k_fit, basis->num_modes());
        smc.potential = pot;
        result.smc = run_smc(smc);

        const auto mean = detail::ensemble_mean(result.smc.ensemble);
        {
            CsvWriter csv(dir / "mean_field.csv");
            std::vector<std::string> header;
            for (std::size_t k = 0; k < mean.coeff.size(); ++k)
                header.push_back("c" + std::to_string(k));
            csv.header(header);
            csv.row(mean.coeff);
        }
        summary["rel_l2_error"] = relative_l2_error(mean, truth);
        summary["sigma"] = obsv.sigma;
        detail::write_marginals(dir / "marginals.csv", result.smc.ensemble, 20);

        if (cfg.name == "darcy-sparse") {
            auto sweep = silhouette_sweep(result.smc.ensemble.particles, 2, 12, smc.fit.k_fit,
                                          cfg.seed + 2);
            auto forward = [&](const CoeffField& u) { return pot->forward(u); };
            const double avg = avg_data_misfit(sweep.best_report, forward, obsv.data);
            detail::write_clusters(dir / "clusters.csv", sweep.best_report);
            const double noise_floor =
                obsv.sigma * std::sqrt(static_cast<double>(obsv.data.size()));
            json misfits = json::array();
            for (const auto& c : sweep.best_report.clusters) misfits.push_back(c.data_misfit);
            summary["n_modal"] = sweep.best_k;
            summary["silhouette"] = sweep.best_score;
            summary["avg_misfit"] = avg;
            summary["cluster_misfits"] = misfits;
            summary["noise_floor"] = noise_floor;
        } else {
            auto rep = kmeans_cluster(result.smc.ensemble.particles, cfg.components,
                                      smc.fit.k_fit, cfg.seed + 2);
            detail::write_clusters(dir / "clusters.csv", rep);
            summary["n_modal"] = rep.n_modal();
        }
    } else if (cfg.name == "conjugate-check") {
        auto [basis, spec] = make_prior_basis(1, cfg.modes, cfg.alpha, cfg.power);
        // fixed synthetic data for the identity observation of all modes
        std::vector<double> data(basis->num_modes());
        RngStream drng(cfg.data_seed, {13});
        for (std::size_t k = 0; k < data.size(); ++k)
            data[k] = std::sqrt(spec->eigenvalues[k] + cfg.sigma * cfg.sigma) * drng.normal();
        smc.prior = spec;
        smc.fit.k_fit = std::min<std::size_t>(smc.fit.k_fit, basis->num_modes());
        smc.potential = std::make_shared<LinearTestPotential>(data.size(), cfg.sigma, data);
        result.smc = run_smc(smc);

        json modes_report = json::array();
        const auto& ens = result.smc.ensemble;
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double lam = spec->eigenvalues[k];
            const double pv = 1.0 / (1.0 / lam + 1.0 / (cfg.sigma * cfg.sigma));
            const double pm = pv * data[k] / (cfg.sigma * cfg.sigma);
            double m = 0.0, v = 0.0;
            for (const auto& p : ens.particles) m += p.coeff[k];
            m /= ens.size();
            for (const auto& p : ens.particles) v += std::pow(p.coeff[k] - m, 2);
            v /= ens.size();
            modes_report.push_back(json{{"mode", k},
                                        {"posterior_mean", pm},
                                        {"posterior_var", pv},
                                        {"ensemble_mean", m},
                                        {"ensemble_var", v}});
        }
        summary["modes"] = modes_report;
    } else if (cfg.name == "mesh-independence") {
        // one data set from a fixed fine-basis truth, shared by every mesh
        auto [tbasis, tspec] = make_prior_basis(2, cfg.modes, cfg.alpha, cfg.power);
        RngStream truth_rng(cfg.data_seed, {11});
        auto truth = sample_prior(tspec, truth_rng);
        DarcyConfig dcfg{cfg.resolutions.front(), cfg.fine_res, cfg.source};
        RngStream noise_rng(cfg.data_seed, {12});
        auto obsv = synthesize_data(truth, dcfg, measurement_grid(cfg.obs), cfg.noise_pct,
                                    noise_rng);
        write_observation(dir, obsv, cfg);

        CsvWriter csv(dir / "meshindep.csv");
        const std::vector<std::string> header{"resolution", "layer", "h", "h_cum"};
        csv.header(header);
        json res_report = json::array();
        for (int res : cfg.resolutions) {
            // inversion modes track the mesh: d = res^2 unknowns
            auto [basis, spec] = make_prior_basis(2, res, cfg.alpha, cfg.power);
            DarcyConfig rcfg{res, cfg.fine_res, cfg.source};
            SmcConfig rsmc = smc;
            rsmc.prior = spec;
            rsmc.fit = cfg.fit_config();
            rsmc.fit.k_fit = std::min<std::size_t>(rsmc.fit.k_fit, basis->num_modes());
            rsmc.potential = std::make_shared<DarcyPotential>(basis, rcfg, obsv);
            auto r = run_smc(rsmc);
            for (const auto& l : r.schedule.layers)
                csv.row(std::vector<double>{static_cast<double>(res),
                                            static_cast<double>(l.layer), l.h, l.h_cum});
            res_report.push_back(json{{"resolution", res},
                                      {"layers", r.schedule.J()},
                                      {"potential_evals", r.potential_evals},
                                      {"final_beta", r.final_beta}});
            if (res == cfg.resolutions.back()) result.smc = std::move(r);
        }
        summary["resolutions"] = res_report;
    }

    summary["layers"] = result.smc.schedule.J();
    summary["potential_evals"] = result.smc.potential_evals;
    summary["final_beta"] = result.smc.final_beta;

    write_runlog(dir / "runlog.jsonl", result.smc.schedule);
    write_ensemble_csv(dir / "ensemble.csv", result.smc.ensemble);
    write_json(dir / "summary.json", summary);
    write_json(dir / "manifest.json", json{{"schema", 1},
                                           {"tool", "smcgm"},
                                           {"config", config_to_json(cfg)},
                                           {"config_hash", config_hash(cfg)},
                                           {"seed", cfg.seed}});
    result.config = cfg;
    result.summary = std::move(summary);
    return result;
}

// Per-mode TV table over the first 20 fitted coefficients, mean-field
// relative L2 difference, solve-count ratio.
inline json compare_runs(const fs::path& dir_a, const fs::path& dir_b) {
    const auto man_a = read_json(dir_a / "manifest.json");
    const auto man_b = read_json(dir_b / "manifest.json");
    const auto prior_a = man_a.at("config").at("prior");
    const auto prior_b = man_b.at("config").at("prior");
    const auto name_a = man_a.at("config").at("experiment").at("name");
    const auto name_b = man_b.at("config").at("experiment").at("name");
    if (prior_a != prior_b || name_a != name_b)
        throw config_error("compare: runs use different experiments or prior bases");

    const auto ens_a = read_ensemble_csv(dir_a / "ensemble.csv");
    const auto ens_b = read_ensemble_csv(dir_b / "ensemble.csv");
    const std::size_t K = std::min(ens_a.front().size(), ens_b.front().size());
    const std::size_t n_tv = std::min<std::size_t>(20, K);

    json tv_table = json::array();
    double tv_sum = 0.0;
    std::vector<double> xa(ens_a.size()), xb(ens_b.size());
    for (std::size_t k = 0; k < n_tv; ++k) {
        for (std::size_t i = 0; i < ens_a.size(); ++i) xa[i] = ens_a[i][k];
        for (std::size_t i = 0; i < ens_b.size(); ++i) xb[i] = ens_b[i][k];
        const auto da = kde_marginal(xa, kde_grid(xa), k);
        const auto db = kde_marginal(xb, kde_grid(xb), k);
        const double tv = tv_distance(da, db);
        tv_sum += tv;
        tv_table.push_back(json{{"mode", k}, {"tv", tv}});
    }

    std::vector<double> mean_a(K, 0.0), mean_b(K, 0.0);
    for (const auto& r : ens_a)
        for (std::size_t k = 0; k < K; ++k) mean_a[k] += r[k];
    for (const auto& r : ens_b)
        for (std::size_t k = 0; k < K; ++k) mean_b[k] += r[k];
    double na = 0.0, nb = 0.0, nd = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        mean_a[k] /= ens_a.size();
        mean_b[k] /= ens_b.size();
        na += mean_a[k] * mean_a[k];
        nb += mean_b[k] * mean_b[k];
        nd += std::pow(mean_a[k] - mean_b[k], 2);
    }
    const double denom = 0.5 * (std::sqrt(na) + std::sqrt(nb));

    auto last_solves = [](const fs::path& dir) -> double {
        std::istringstream in(read_text(dir / "runlog.jsonl"));
        std::string line, last;
        while (std::getline(in, line))
            if (!line.empty()) last = line;
        if (last.empty()) throw config_error("empty run log in " + dir.string());
        return json::parse(last).at("solves_cum").get<double>();
    };
    const double solves_a = last_solves(dir_a);
    const double solves_b = last_solves(dir_b);

    return json{{"run_a", dir_a.string()},
                {"run_b", dir_b.string()},
                {"tv_per_mode", tv_table},
                {"avg_tv", tv_sum / static_cast<double>(n_tv)},
                {"mean_rel_l2_diff", denom > 0 ? std::sqrt(nd) / denom : 0.0},
                {"solve_ratio", solves_a / solves_b}};
}

} // namespace smcgm
