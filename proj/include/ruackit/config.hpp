#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ruackit/benchmark.hpp"
#include "ruackit/eval.hpp"
#include "ruackit/trainer.hpp"

namespace ruackit {

/// Flat run configuration: training, benchmark and evaluation settings in
/// one key=value namespace. Files are plain "key = value" lines with '#'
/// comments; flags override file values; RUACKIT_<KEY> environment
/// variables override both.
struct RunConfig {
    TrainConfig train;
    BenchmarkConfig bench;
    EvalOptions eval;
};

namespace config_detail {

class Binder {
public:
    explicit Binder(RunConfig& cfg) {
        bind_double("beta", cfg.train.beta);
        bind_double("gamma", cfg.train.gamma);
        bind_double("lambda_cal", cfg.train.lambda_cal);
        bind_double("eps_style", cfg.train.eps_style);
        bind_double("eps_style_shift", cfg.train.eps_style_shift);
        bind_double("eps_deform", cfg.train.eps_deform);
        bind_double("lr_head", cfg.train.lr_head);
        bind_double("lr_attack_hi", cfg.train.lr_attack_hi);
        bind_double("lr_attack_lo", cfg.train.lr_attack_lo);
        bind_double("weight_decay", cfg.train.weight_decay);
        bind_int("epochs", cfg.train.epochs);
        bind_double("p1", cfg.train.p1);
        bind_double("p2", cfg.train.p2);
        bind_double("kl_element_scale", cfg.train.kl_element_scale);
        bind_int("batch", cfg.train.batch);
        bind_u64("seed", cfg.train.seed);
        bind_bool("cal_to_head", cfg.train.cal_to_head);
        bind_bool("ue_only", cfg.train.ue_only);
        bind_bool("style_enabled", cfg.train.style_enabled);
        bind_style("style_variant", cfg.train.style_variant);
        bind_bool("deform_enabled", cfg.train.deform_enabled);
        bind_double("grl_scale", cfg.train.grl_scale);
        bind_int("jobs", cfg.train.jobs);
        bind_int("c_feat", cfg.train.head.c_feat);
        bind_int("k_hyp", cfg.train.head.k_hyp);
        bind_int("mlp_hidden", cfg.train.head.mlp_hidden);
        bind_int("f_enc", cfg.train.f_enc);
        bind_int("d_deform", cfg.train.d_deform);
        bind_int("bench_h", cfg.bench.h);
        bind_int("bench_w", cfg.bench.w);
        bind_int("n_train", cfg.bench.n_train);
        bind_int("n_val", cfg.bench.n_val);
        bind_int("n_ood", cfg.bench.n_ood);
        bind_u64("bench_seed", cfg.bench.base_seed);
        bind_int("mc_samples", cfg.eval.mc_samples);
        bind_int("patch_size", cfg.eval.patch_size);
        bind_taus("taus", cfg.eval.taus);
        bind_int("ece_bins", cfg.eval.ece_bins);
        bind_double("boundary_tol", cfg.eval.boundary_tol);
        bind_bool("unc_corr", cfg.eval.apply_unc_corr);
        bind_int("eval_jobs", cfg.eval.jobs);
        bind_u64("mc_seed", cfg.eval.mc_seed);
    }

    void set(const std::string& key, const std::string& value) {
        auto it = setters_.find(key);
        if (it == setters_.end())
            throw std::invalid_argument("config: unknown key \"" + key + "\"");
        it->second(value);
    }

    std::string echo() const {
        std::ostringstream out;
        for (const std::string& key : order_) out << key << " = " << getters_.at(key)() << "\n";
        return out.str();
    }

    const std::vector<std::string>& keys() const { return order_; }

private:
    template <typename SetFn, typename GetFn>
    void add(const std::string& key, SetFn set, GetFn get) {
        order_.push_back(key);
        setters_[key] = set;
        getters_[key] = get;
    }

    static double parse_double(const std::string& key, const std::string& v) {
        size_t pos = 0;
        double out;
        try {
            out = std::stod(v, &pos);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key \"" + key + "\" expects a number, got \"" +
                                        v + "\"");
        }
        if (pos != v.size())
            throw std::invalid_argument("config: key \"" + key + "\" expects a number, got \"" +
                                        v + "\"");
        return out;
    }

    void bind_double(const std::string& key, double& ref) {
        add(key, [key, &ref](const std::string& v) { ref = parse_double(key, v); },
            [&ref] {
                std::ostringstream s;
                s << ref;
                return s.str();
            });
    }

    void bind_int(const std::string& key, int& ref) {
        add(key,
            [key, &ref](const std::string& v) {
                double d = parse_double(key, v);
                if (d != static_cast<int>(d))
                    throw std::invalid_argument("config: key \"" + key + "\" expects an integer");
                ref = static_cast<int>(d);
            },
            [&ref] { return std::to_string(ref); });
    }

    void bind_u64(const std::string& key, std::uint64_t& ref) {
        add(key,
            [key, &ref](const std::string& v) {
                try {
                    ref = std::stoull(v);
                } catch (const std::exception&) {
                    throw std::invalid_argument("config: key \"" + key +
                                                "\" expects an unsigned integer");
                }
            },
            [&ref] { return std::to_string(ref); });
    }

    void bind_bool(const std::string& key, bool& ref) {
        add(key,
            [key, &ref](const std::string& v) {
                if (v == "true" || v == "1")
                    ref = true;
                else if (v == "false" || v == "0")
                    ref = false;
                else
                    throw std::invalid_argument("config: key \"" + key +
                                                "\" expects true/false");
            },
            [&ref] { return std::string(ref ? "true" : "false"); });
    }

    void bind_style(const std::string& key, StyleVariant& ref) {
        add(key, [&ref](const std::string& v) { ref = style_variant_from_string(v); },
            [&ref] {
                switch (ref) {
                    case StyleVariant::kSingle: return std::string("single");
                    case StyleVariant::kMulti: return std::string("multi");
                    case StyleVariant::kMultiBg: return std::string("multi_bg");
                    case StyleVariant::kGcn: return std::string("gcn");
                }
                return std::string("gcn");
            });
    }

    void bind_taus(const std::string& key, std::vector<double>& ref) {
        add(key,
            [key, &ref](const std::string& v) {
                std::vector<double> out;
                std::stringstream ss(v);
                std::string item;
                while (std::getline(ss, item, ','))
                    out.push_back(parse_double(key, item));
                if (out.empty())
                    throw std::invalid_argument("config: key \"" + key +
                                                "\" expects a comma list");
                ref = out;
            },
            [&ref] {
                std::ostringstream s;
                for (size_t i = 0; i < ref.size(); ++i) {
                    if (i) s << ',';
                    s << ref[i];
                }
                return s.str();
            });
    }

    std::vector<std::string> order_;
    std::map<std::string, std::function<void(const std::string&)>> setters_;
    std::map<std::string, std::function<std::string()>> getters_;
};

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace config_detail

/// Merge order: defaults, then the file, then RUACKIT_* environment
/// variables, then explicit flag overrides (highest precedence).
inline RunConfig parse_config(const std::filesystem::path& file,
                              const std::map<std::string, std::string>& flag_overrides = {}) {
    RunConfig cfg;
    config_detail::Binder binder(cfg);
    if (!file.empty()) {
        std::ifstream f(file);
        if (!f) throw std::invalid_argument("config: cannot open " + file.string());
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            std::string s = config_detail::trim(line);
            if (s.empty() || s[0] == '#') continue;
            size_t eq = s.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                            " is not key = value");
            binder.set(config_detail::trim(s.substr(0, eq)),
                       config_detail::trim(s.substr(eq + 1)));
        }
    }
    for (const std::string& key : binder.keys()) {
        std::string env_name = "RUACKIT_";
        for (char c : key) env_name += static_cast<char>(std::toupper(c));
        if (const char* v = std::getenv(env_name.c_str())) binder.set(key, v);
    }
    for (const auto& [key, value] : flag_overrides) binder.set(key, value);
    cfg.train.validate();
    return cfg;
}

/// The exact effective configuration, echoed into run directories.
inline std::string echo_config(RunConfig& cfg) {
    config_detail::Binder binder(cfg);
    return binder.echo();
}

}  // namespace ruackit
