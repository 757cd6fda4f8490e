#pragma once

// Key = value configuration in [section] groups, validated against a fixed
// schema (unknown keys are errors) and merged with command-line overrides.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mdn/data.hpp"
#include "mdn/model.hpp"

namespace mdn {

class Config {
public:
    // full schema with desk-scale defaults; paper-scale values are reachable
    // by overriding dims
    static const std::map<std::string, std::string>& schema() {
        static const std::map<std::string, std::string> defaults = {
            {"data.root", ""},
            {"data.kind", "ma52-like"},
            {"data.frames", "8"},
            {"data.stride", "1"},
            {"data.theta", "0.3"},
            {"data.pad", "0.10"},
            {"data.augment", "true"},
            {"data.flip_prob", "0.5"},
            {"model.d", "64"},
            {"model.backbone_channels", "16,32,48,64"},
            {"model.shift_frac", "0.125"},
            {"model.roi_p", "4"},
            {"model.roi_samples", "2"},
            {"model.layers", "2"},
            {"model.heads", "4"},
            {"model.ffn_dim", "128"},
            {"model.dropout", "0.1"},
            {"model.tau_r", "0.7"},
            {"model.tau_mac", "0.07"},
            {"model.lambda", "0.1"},
            {"model.classifier_h1", "512"},
            {"model.classifier_h2", "256"},
            {"train.epochs", "60"},
            {"train.batch_size", "8"},
            {"train.lr", "0.01"},
            {"train.momentum", "0.9"},
            {"train.weight_decay", "0.0005"},
            {"train.warmup_epochs", "5"},
            {"train.warmup_start", "0.001"},
            {"train.seed", "7"},
            {"train.stop_at_train_top1", "0"},
            {"train.eval_every", "1"},
            {"ablation.st_only", "false"},
            {"ablation.ts_only", "false"},
            {"ablation.no_mac", "false"},
            {"ablation.no_routing", "false"},
            {"ablation.no_sem", "false"},
            {"ablation.sem_only", "false"},
            {"ablation.shared_transformers", "false"},
            {"ablation.frame_level_mac", "false"},
        };
        return defaults;
    }

    Config() : values_(schema()) {}

    static Config from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        check<ConfigError>(in.good(), "cannot open config: ", path.string());
        Config cfg;
        std::string line, section;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find_first_of("#;");
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                check<ConfigError>(line.back() == ']', "config line ", line_no,
                                   ": malformed section header");
                section = line.substr(1, line.size() - 2);
                continue;
            }
            const auto eq = line.find('=');
            check<ConfigError>(eq != std::string::npos, "config line ", line_no,
                               ": expected key = value");
            const std::string key = section + "." + trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            check<ConfigError>(schema().count(key) == 1, "config line ", line_no,
                               ": unknown key '", key, "'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    // "section.key=value"
    void apply_override(const std::string& kv) {
        const auto eq = kv.find('=');
        check<ConfigError>(eq != std::string::npos, "override '", kv,
                           "' must be section.key=value");
        const std::string key = kv.substr(0, eq);
        check<ConfigError>(schema().count(key) == 1, "unknown config key '", key, "'");
        values_[key] = kv.substr(eq + 1);
    }

    std::string get_str(const std::string& key) const {
        auto it = values_.find(key);
        check<ConfigError>(it != values_.end(), "unknown config key '", key, "'");
        return it->second;
    }
    int64_t get_int(const std::string& key) const {
        try {
            return std::stoll(get_str(key));
        } catch (const std::exception&) {
            fail<ConfigError>("config key '", key, "' is not an integer: '", get_str(key), "'");
        }
    }
    double get_double(const std::string& key) const {
        try {
            return std::stod(get_str(key));
        } catch (const std::exception&) {
            fail<ConfigError>("config key '", key, "' is not a number: '", get_str(key), "'");
        }
    }
    bool get_bool(const std::string& key) const {
        const auto v = get_str(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail<ConfigError>("config key '", key, "' is not a boolean: '", v, "'");
    }
    void set(const std::string& key, const std::string& value) {
        check<ConfigError>(schema().count(key) == 1, "unknown config key '", key, "'");
        values_[key] = value;
    }

    DatasetKind dataset_kind() const { return dataset_kind_from(get_str("data.kind")); }

    ModelConfig model_config(int64_t num_classes) const {
        ModelConfig mc;
        mc.d = get_int("model.d");
        {
            std::stringstream ss(get_str("model.backbone_channels"));
            std::string cell;
            std::vector<int64_t> ch;
            while (std::getline(ss, cell, ',')) ch.push_back(std::stoll(cell));
            check<ConfigError>(ch.size() == 4, "model.backbone_channels needs 4 entries");
            std::copy(ch.begin(), ch.end(), mc.backbone_channels.begin());
        }
        mc.shift_frac = get_double("model.shift_frac");
        mc.roi_p = get_int("model.roi_p");
        mc.roi_samples = get_int("model.roi_samples");
        mc.layers = get_int("model.layers");
        mc.heads = get_int("model.heads");
        mc.ffn_dim = get_int("model.ffn_dim");
        mc.dropout = get_double("model.dropout");
        mc.tau_r = get_double("model.tau_r");
        mc.tau_mac = get_double("model.tau_mac");
        mc.lambda_mac = get_double("model.lambda");
        mc.classifier_h1 = get_int("model.classifier_h1");
        mc.classifier_h2 = get_int("model.classifier_h2");
        mc.num_classes = num_classes;
        mc.shared_transformers = get_bool("ablation.shared_transformers");
        mc.frame_level_mac = get_bool("ablation.frame_level_mac");

        const bool st_only = get_bool("ablation.st_only");
        const bool ts_only = get_bool("ablation.ts_only");
        const bool sem_only = get_bool("ablation.sem_only");
        const bool no_sem = get_bool("ablation.no_sem");
        check<ConfigError>(!(st_only && ts_only), "st_only and ts_only are mutually exclusive");
        if (no_sem) {
            mc.use_sem = false;
            mc.use_st = mc.use_ts = false;
            mc.use_routing = mc.use_mac = false;
        } else if (sem_only) {
            mc.use_st = mc.use_ts = false;
            mc.use_routing = mc.use_mac = false;
        } else if (st_only || ts_only) {
            mc.use_st = st_only;
            mc.use_ts = ts_only;
            mc.use_routing = false;
            mc.use_mac = false;
        } else {
            if (get_bool("ablation.no_mac")) mc.use_mac = false;
            if (get_bool("ablation.no_routing")) mc.use_routing = false;
        }
        return mc;
    }

    LoaderConfig loader_config(bool augment) const {
        LoaderConfig lc;
        lc.frames = get_int("data.frames");
        lc.stride = get_int("data.stride");
        lc.theta = get_double("data.theta");
        lc.pad_frac = get_double("data.pad");
        lc.augment = augment && get_bool("data.augment");
        lc.flip_prob = get_double("data.flip_prob");
        return lc;
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace mdn
