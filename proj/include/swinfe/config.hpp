#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "swinfe/errors.hpp"
#include "swinfe/head.hpp"
#include "swinfe/neck.hpp"
#include "swinfe/optim.hpp"
#include "swinfe/swin.hpp"
#include "swinfe/synth.hpp"

namespace swinfe {

struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* doc;
};

// Every accepted key. Defaults follow the Swin-T / FEFPN geometry and the
// AdamW settings; configs/toy.cfg scales the model down for CPU runs.
inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"backbone.embed_dim", "96", "channels C of the first stage"},
        {"backbone.depths", "2,2,6,2", "blocks per stage (each even)"},
        {"backbone.heads", "3,6,12,24", "attention heads per stage"},
        {"backbone.window", "7", "window side in tokens"},
        {"backbone.patch", "4", "patch side in pixels"},
        {"backbone.in_channels", "1", "image channels"},
        {"backbone.mlp_ratio", "4", "MLP hidden width / channels"},
        {"backbone.rel_pos_bias", "false", "learned relative position bias in attention"},
        {"neck.kind", "fefpn", "fpn | pafpn | fefpn"},
        {"neck.channels", "256", "uniform pyramid channels"},
        {"neck.factors", "1.0,0.5,0.25", "fusion factor of each top-down path"},
        {"neck.residual_levels", "0,1,2", "levels receiving path-1 residuals (fefpn)"},
        {"head.scales", "1.0", "anchor scales, in units of the level stride"},
        {"head.ratios", "0.5,1,2", "anchor aspect ratios (height / width)"},
        {"head.nms_iou", "0.5", "NMS IoU threshold"},
        {"head.score_thresh", "0.05", "minimum score kept before NMS"},
        {"head.pre_nms_top", "300", "candidates kept before NMS"},
        {"head.samples_per_image", "256", "anchors sampled per image for the loss"},
        {"head.positive_fraction", "0.5", "maximum positive share of the sample"},
        {"head.positive_iou", "0.7", "IoU at or above which an anchor is positive"},
        {"head.negative_iou", "0.3", "IoU below which an anchor is negative"},
        {"data.image_size", "224", "square image side in pixels"},
        {"data.num_images", "250", "generated images (train + eval)"},
        {"data.train_fraction", "0.8", "leading share of indices used for training"},
        {"data.ships_min", "1", "minimum ships per image"},
        {"data.ships_max", "3", "maximum ships per image"},
        {"data.length_min", "6", "minimum ship length in pixels"},
        {"data.length_max", "20", "maximum ship length in pixels"},
        {"data.aspect_min", "2", "minimum length / width"},
        {"data.aspect_max", "4", "maximum length / width"},
        {"data.gain", "4", "ship intensity relative to the sea background"},
        {"data.background", "0.25", "mean sea intensity"},
        {"optim.lr", "1e-4", "AdamW learning rate (constant)"},
        {"optim.weight_decay", "0.05", "AdamW decoupled weight decay"},
        {"optim.beta1", "0.9", "AdamW first-moment decay"},
        {"optim.beta2", "0.999", "AdamW second-moment decay"},
        {"optim.eps", "1e-8", "AdamW epsilon"},
        {"run.steps", "2000", "optimizer steps"},
        {"run.batch", "2", "images per step"},
        {"run.seed", "42", "seed for data, init and sampling"},
        {"run.log_every", "1", "loss log interval in steps"},
        {"run.checkpoint_every", "0", "intermediate checkpoint interval (0 = final only)"},
        {"metrics.iou_thresh", "0.5", "IoU for a detection to count as a true positive"},
        {"eval.max_images", "0", "cap on evaluated images (0 = whole eval split)"},
    };
    return keys;
}

/// Flat key=value configuration: defaults, then a file, then overrides.
class RunConfig {
public:
    RunConfig() {
        for (const auto& k : config_keys()) values_[k.name] = k.default_value;
    }

    static RunConfig from_file(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot read config file: " + path.string());
        RunConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            if (trim(line).empty()) continue;
            try {
                cfg.set_assignment(line);
            } catch (const ConfigError& e) {
                throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
        return cfg;
    }

    /// Parses "key=value".
    void set_assignment(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
        set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    double real(const std::string& key) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(str(key), &used);
            if (used != str(key).size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::logic_error&) {
            throw ConfigError("config key '" + key + "' expects a number, got '" + str(key) + "'");
        }
    }

    std::uint64_t integer(const std::string& key) const {
        const std::string& s = str(key);
        if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + s + "'");
        }
        return std::stoull(s);
    }

    bool boolean(const std::string& key) const {
        const std::string& s = str(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ConfigError("config key '" + key + "' expects true/false, got '" + s + "'");
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                out.push_back(std::stod(trim(item)));
            } catch (const std::logic_error&) {
                throw ConfigError("config key '" + key + "' expects a comma-separated list of numbers");
            }
        }
        return out;
    }

    std::vector<std::size_t> integers(const std::string& key) const {
        std::vector<std::size_t> out;
        for (double v : reals(key)) {
            if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
                throw ConfigError("config key '" + key + "' expects non-negative integers");
            }
            out.push_back(static_cast<std::size_t>(v));
        }
        return out;
    }

    /// Every key, sorted, one "key=value" per line.
    std::string dump() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
        return out;
    }

    SwinConfig swin() const {
        SwinConfig c;
        c.embed_dim = integer("backbone.embed_dim");
        const auto depths = integers("backbone.depths");
        const auto heads = integers("backbone.heads");
        if (depths.size() != 4 || heads.size() != 4) throw ConfigError("backbone.depths and backbone.heads need 4 entries");
        std::copy(depths.begin(), depths.end(), c.depths.begin());
        std::copy(heads.begin(), heads.end(), c.heads.begin());
        c.window = integer("backbone.window");
        c.patch = integer("backbone.patch");
        c.in_channels = integer("backbone.in_channels");
        c.mlp_ratio = real("backbone.mlp_ratio");
        c.rel_pos_bias = boolean("backbone.rel_pos_bias");
        c.validate();
        return c;
    }

    NeckConfig neck() const {
        NeckConfig c;
        c.kind = parse_neck_kind(str("neck.kind"));
        c.channels = integer("neck.channels");
        const auto f = reals("neck.factors");
        if (f.size() != 3) throw ConfigError("neck.factors needs 3 entries");
        std::copy(f.begin(), f.end(), c.fusion_factors.begin());
        const auto lv = integers("neck.residual_levels");
        c.residual_levels = std::set<std::size_t>(lv.begin(), lv.end());
        c.validate();
        return c;
    }

    HeadConfig head() const {
        HeadConfig c;
        c.scales = reals("head.scales");
        c.ratios = reals("head.ratios");
        c.nms_iou = real("head.nms_iou");
        c.score_thresh = real("head.score_thresh");
        c.pre_nms_top = integer("head.pre_nms_top");
        c.samples_per_image = integer("head.samples_per_image");
        c.positive_fraction = real("head.positive_fraction");
        c.positive_iou = real("head.positive_iou");
        c.negative_iou = real("head.negative_iou");
        c.validate();
        return c;
    }

    SynthConfig synth() const {
        SynthConfig c;
        c.image_size = integer("data.image_size");
        c.ships_min = integer("data.ships_min");
        c.ships_max = integer("data.ships_max");
        c.length_min = real("data.length_min");
        c.length_max = real("data.length_max");
        c.aspect_min = real("data.aspect_min");
        c.aspect_max = real("data.aspect_max");
        c.intensity_gain = real("data.gain");
        c.background = real("data.background");
        c.seed = integer("run.seed");
        c.validate();
        return c;
    }

    AdamWOptions optim() const {
        AdamWOptions o;
        o.lr = real("optim.lr");
        o.weight_decay = real("optim.weight_decay");
        o.beta1 = real("optim.beta1");
        o.beta2 = real("optim.beta2");
        o.eps = real("optim.eps");
        if (o.lr < 0 || o.weight_decay < 0) throw ConfigError("optim.lr and optim.weight_decay must be non-negative");
        return o;
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace swinfe
