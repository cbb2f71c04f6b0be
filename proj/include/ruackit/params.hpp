#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ruackit/grid.hpp"
#include "ruackit/grid_io.hpp"
#include "ruackit/tape.hpp"

namespace ruackit {

/// Named parameter grids in a stable declaration order. Checkpoints are a
/// params.bin of back-to-back RGRD records plus a manifest.json listing
/// names, shapes and byte offsets.
class ParamStore {
public:
    Grid& declare(const std::string& name, Grid init) {
        if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        grids_.push_back(std::move(init));
        return grids_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Grid& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown " + name);
        return grids_[it->second];
    }
    const Grid& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown " + name);
        return grids_[it->second];
    }

    const std::vector<std::string>& names() const { return names_; }
    size_t count() const { return names_.size(); }
    Grid& at(size_t i) { return grids_[i]; }
    const Grid& at(size_t i) const { return grids_[i]; }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const Grid& g : grids_) n += g.size();
        return n;
    }

    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json manifest;
        manifest["format"] = "ruackit-params-v1";
        manifest["file"] = "params.bin";
        std::string blob;
        for (size_t i = 0; i < names_.size(); ++i) {
            nlohmann::json entry;
            entry["name"] = names_[i];
            entry["shape"] = grids_[i].shape();
            entry["offset"] = blob.size();
            manifest["params"].push_back(entry);
            blob += grid_to_bytes(grids_[i]);
        }
        std::ofstream bin(dir / "params.bin", std::ios::binary);
        bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        std::ofstream mf(dir / "manifest.json");
        mf << manifest.dump(2) << "\n";
        if (!bin || !mf) throw std::runtime_error("ParamStore: save failed in " + dir.string());
    }

    static ParamStore load(const std::filesystem::path& dir) {
        std::ifstream mf(dir / "manifest.json");
        if (!mf) throw std::runtime_error("ParamStore: missing manifest in " + dir.string());
        nlohmann::json manifest = nlohmann::json::parse(mf);
        std::ifstream bin(dir / manifest.value("file", "params.bin"), std::ios::binary);
        if (!bin) throw std::runtime_error("ParamStore: missing params.bin in " + dir.string());
        std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
        ParamStore out;
        for (const auto& entry : manifest.at("params")) {
            size_t off = entry.at("offset").get<size_t>();
            Grid g = grid_from_bytes(blob.data() + off, blob.size() - off);
            std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
            if (g.shape() != shape)
                throw std::runtime_error("ParamStore: shape mismatch for " +
                                         entry.at("name").get<std::string>());
            out.declare(entry.at("name").get<std::string>(), std::move(g));
        }
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<Grid> grids_;
    std::map<std::string, size_t> index_;
};

/// Per-tape binding of a ParamStore: parameter leaves created on demand.
class BoundParams {
public:
    BoundParams(Tape& tape, const ParamStore& store) : tape_(&tape), store_(&store) {}

    Value operator[](const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        Value v = tape_->param(store_->get(name), name);
        bound_.emplace(name, v);
        return v;
    }

    /// Gradients for every bound parameter after backward; zeros for
    /// parameters the loss never touched. Adds into `out` keyed by name.
    void add_grads_into(std::map<std::string, Grid>& out) const {
        for (const auto& [name, v] : bound_) {
            const Grid& g = tape_->grad(v);
            auto it = out.find(name);
            if (it == out.end()) {
                out.emplace(name, g);
            } else {
                for (std::int64_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
            }
        }
    }

private:
    Tape* tape_;
    const ParamStore* store_;
    std::map<std::string, Value> bound_;
};

}  // namespace ruackit
