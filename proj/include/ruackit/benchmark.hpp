#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ruackit/grid_io.hpp"
#include "ruackit/synth_data.hpp"

namespace ruackit {

struct DomainSpec {
    std::string name;
    ShiftKind kind = ShiftKind::kColorTransfer;
    double magnitude = 0.0;
};

inline std::vector<DomainSpec> default_domains() {
    return {
        {"color_mild", ShiftKind::kColorTransfer, 0.35},
        {"color_strong", ShiftKind::kColorTransfer, 0.7},
        {"blur_mild", ShiftKind::kBlur, 0.8},
        {"blur_strong", ShiftKind::kBlur, 1.6},
        {"elastic_mild", ShiftKind::kElastic, 1.5},
        {"elastic_strong", ShiftKind::kElastic, 3.0},
    };
}

struct BenchmarkConfig {
    int h = 64, w = 64;
    int n_train = 64, n_val = 16, n_ood = 32;
    std::uint64_t base_seed = 1000;
    std::vector<DomainSpec> domains = default_domains();
};

struct Benchmark {
    struct Domain {
        DomainSpec spec;
        std::vector<Scene> scenes;
    };
    BenchmarkConfig cfg;
    std::vector<Scene> train, val;
    std::vector<Domain> domains;
};

namespace bench_detail {

inline Scene make_source_scene(std::uint64_t seed, int h, int w) {
    SceneSpec spec;
    spec.h = h;
    spec.w = w;
    spec.n_objects = 1 + static_cast<int>((seed * 2654435761ULL >> 8) % 3);
    return gen_scene(seed, spec);
}

}  // namespace bench_detail

/// Seed layout keeps the OOD base scenes disjoint from the source split.
inline Benchmark build_benchmark(const BenchmarkConfig& cfg) {
    Benchmark b;
    b.cfg = cfg;
    for (int i = 0; i < cfg.n_train; ++i)
        b.train.push_back(bench_detail::make_source_scene(cfg.base_seed + i, cfg.h, cfg.w));
    for (int i = 0; i < cfg.n_val; ++i)
        b.val.push_back(bench_detail::make_source_scene(cfg.base_seed + 10000 + i, cfg.h, cfg.w));
    for (size_t d = 0; d < cfg.domains.size(); ++d) {
        Benchmark::Domain dom;
        dom.spec = cfg.domains[d];
        for (int i = 0; i < cfg.n_ood; ++i) {
            std::uint64_t seed = cfg.base_seed + 20000 + 1000 * d + i;
            Scene base = bench_detail::make_source_scene(seed, cfg.h, cfg.w);
            ShiftSpec shift{dom.spec.kind, dom.spec.magnitude, seed ^ 0xd0a1ULL};
            dom.scenes.push_back(apply_shift(base, shift));
        }
        b.domains.push_back(std::move(dom));
    }
    return b;
}

inline nlohmann::json scene_manifest_entry(const Scene& s) {
    nlohmann::json j;
    j["seed"] = s.seed;
    j["n_objects"] = s.masks.size();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(grid_content_hash(s.image)));
    j["image_hash"] = buf;
    for (const Grid& m : s.masks) {
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(grid_content_hash(m)));
        j["mask_hashes"].push_back(buf);
    }
    return j;
}

inline nlohmann::json benchmark_manifest(const Benchmark& b) {
    nlohmann::json j;
    j["format"] = "ruackit-benchmark-v1";
    j["h"] = b.cfg.h;
    j["w"] = b.cfg.w;
    j["n_train"] = b.cfg.n_train;
    j["n_val"] = b.cfg.n_val;
    j["n_ood"] = b.cfg.n_ood;
    j["base_seed"] = b.cfg.base_seed;
    for (const Scene& s : b.train) j["train"].push_back(scene_manifest_entry(s));
    for (const Scene& s : b.val) j["val"].push_back(scene_manifest_entry(s));
    for (const auto& dom : b.domains) {
        nlohmann::json dj;
        dj["name"] = dom.spec.name;
        dj["kind"] = shift_kind_name(dom.spec.kind);
        dj["magnitude"] = dom.spec.magnitude;
        for (const Scene& s : dom.scenes) dj["scenes"].push_back(scene_manifest_entry(s));
        j["domains"].push_back(dj);
    }
    return j;
}

inline void save_scene(const std::filesystem::path& dir, const Scene& s, bool previews) {
    std::filesystem::create_directories(dir);
    save_grid(dir / "image.rgrd", s.image);
    nlohmann::json clicks = nlohmann::json::array();
    for (size_t k = 0; k < s.masks.size(); ++k) {
        save_grid(dir / ("mask_" + std::to_string(k) + ".rgrd"), s.masks[k]);
        nlohmann::json obj = nlohmann::json::array();
        for (const Click& c : s.clicks[k])
            obj.push_back({{"y", c.y}, {"x", c.x}, {"label", c.label}});
        clicks.push_back(obj);
    }
    std::ofstream cf(dir / "clicks.json");
    cf << clicks.dump(2) << "\n";
    if (previews) save_png(dir / "preview.png", s.image);
}

inline void save_benchmark(const std::filesystem::path& dir, const Benchmark& b,
                           bool previews = true) {
    std::filesystem::create_directories(dir);
    std::ofstream mf(dir / "manifest.json");
    mf << benchmark_manifest(b).dump(2) << "\n";
    auto save_split = [&](const std::string& name, const std::vector<Scene>& scenes) {
        for (size_t i = 0; i < scenes.size(); ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%04zu", i);
            save_scene(dir / name / buf, scenes[i], previews);
        }
    };
    save_split("train", b.train);
    save_split("val", b.val);
    for (const auto& dom : b.domains) save_split("ood_" + dom.spec.name, dom.scenes);
}

/// Rebuilds every scene from the manifest's seeds and verifies the stored
/// content hashes, so a loaded benchmark is pixel-identical by construction.
inline Benchmark load_benchmark(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("load_benchmark: missing manifest at " + dir.string());
    nlohmann::json j = nlohmann::json::parse(mf);
    BenchmarkConfig cfg;
    cfg.h = j.at("h");
    cfg.w = j.at("w");
    cfg.n_train = j.at("n_train");
    cfg.n_val = j.at("n_val");
    cfg.n_ood = j.at("n_ood");
    cfg.base_seed = j.at("base_seed");
    cfg.domains.clear();
    for (const auto& dj : j.at("domains"))
        cfg.domains.push_back({dj.at("name"), shift_kind_from_string(dj.at("kind")),
                               dj.at("magnitude")});
    Benchmark b = build_benchmark(cfg);
    auto verify = [&](const std::vector<Scene>& scenes, const nlohmann::json& entries,
                      const std::string& what) {
        if (scenes.size() != entries.size())
            throw std::runtime_error("load_benchmark: count mismatch in " + what);
        for (size_t i = 0; i < scenes.size(); ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%016llx",
                          static_cast<unsigned long long>(grid_content_hash(scenes[i].image)));
            if (entries[i].at("image_hash") != std::string(buf))
                throw std::runtime_error("load_benchmark: hash mismatch in " + what +
                                         " scene " + std::to_string(i));
        }
    };
    verify(b.train, j.at("train"), "train");
    verify(b.val, j.at("val"), "val");
    for (size_t d = 0; d < b.domains.size(); ++d)
        verify(b.domains[d].scenes, j.at("domains")[d].at("scenes"),
               "domain " + b.domains[d].spec.name);
    return b;
}

}  // namespace ruackit
