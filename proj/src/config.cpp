#include "voxmim/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "voxmim/errors.hpp"

namespace voxmim {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (...) {
        throw UsageError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

int64_t parse_int(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (...) {
        throw UsageError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename T, size_t N>
std::array<T, N> parse_array(const std::string& v, const std::string& key) {
    const auto parts = split_list(v);
    if (parts.size() != N)
        throw UsageError("config key '" + key + "': expected " + std::to_string(N) + " values");
    std::array<T, N> out;
    for (size_t i = 0; i < N; ++i) {
        if constexpr (std::is_integral_v<T>)
            out[i] = static_cast<T>(parse_int(parts[i], key));
        else
            out[i] = static_cast<T>(parse_double(parts[i], key));
    }
    return out;
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    pretrain_cfg.validate();
    train_cfg.validate();
    phantom.validate();
    if (bootstrap_n < 2) throw UsageError("eval.bootstrap_n must be >= 2");
    if (!(train_split > 0.0) || !(train_split < 1.0)) throw UsageError("eval.train_split must lie in (0,1)");
    if (fractions.empty()) throw UsageError("eval.fractions must not be empty");
    for (double f : fractions)
        if (!(f > 0.0) || f > 1.0) throw UsageError("eval.fractions entries must lie in (0,1]");
    if (reproduce_seeds < 1) throw UsageError("reproduce.seeds must be >= 1");
    if (n_unlabeled < 0 || n_labeled < 0) throw UsageError("synth cohort sizes must be >= 0");
}

std::string RunConfig::canonical_string() const {
    std::ostringstream os;
    os.precision(17);
    os << "seed=" << seed << ";spacing=" << preprocess.target_spacing[0] << ","
       << preprocess.target_spacing[1] << "," << preprocess.target_spacing[2]
       << ";lo=" << preprocess.lo << ";hi=" << preprocess.hi << ";clip_first=" << preprocess.clip_first
       << ";mask_mode=" << (mask.mode == MaskMode::Static ? "static" : "dynamic")
       << ";cube=" << mask.cube_dims[0] << "," << mask.cube_dims[1] << "," << mask.cube_dims[2]
       << ";sub=" << mask.subsample << ";inplane=" << mask.inplane_range[0] << "," << mask.inplane_range[1]
       << ";depth=" << mask.depth_range[0] << "," << mask.depth_range[1] << ";subr="
       << mask.subsample_range[0] << "," << mask.subsample_range[1] << ";occ=" << mask.occlusion_ratio
       << ";dims=" << model.input_dims[0] << "," << model.input_dims[1] << "," << model.input_dims[2]
       << ";base=" << model.base_channels << ";stages=" << model.stages << ";convs=";
    for (int c : model.convs_per_stage) os << c << ",";
    os << ";skips=" << model.skip_connections << ";pe=" << pretrain_cfg.epochs << ";pb="
       << pretrain_cfg.batch_size << ";plr=" << pretrain_cfg.lr << ";pm=" << pretrain_cfg.masked_only_loss
       << ";te=" << train_cfg.epochs << ";tb=" << train_cfg.batch_size << ";tlr=" << train_cfg.lr
       << ";n=" << bootstrap_n << ";thr=" << threshold << ";split=" << train_split << ";fft="
       << fraction_from_test << ";fracs=";
    for (double f : fractions) os << f << ",";
    os << ";nu=" << n_unlabeled << ";nl=" << n_labeled << ";bal=" << balance
       << ";noise=" << phantom.noise_amplitude << ";ldelta=" << phantom.lesion_delta
       << ";odelta=" << phantom.organ_delta << ";seeds=" << reproduce_seeds;
    return os.str();
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::map<std::pair<std::string, std::string>, std::string> entries;
    {
        std::istringstream in(text);
        std::string line, section;
        int row = 0;
        while (std::getline(in, line)) {
            ++row;
            const size_t hash = line.find_first_of("#;");
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw UsageError(origin + " line " + std::to_string(row) + ": malformed section");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError(origin + " line " + std::to_string(row) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (!entries.emplace(std::make_pair(section, key), value).second)
                throw UsageError(origin + " line " + std::to_string(row) + ": duplicate key '" + key + "'");
        }
    }

    using Handler = std::function<void(const std::string&, const std::string&)>;
    std::map<std::pair<std::string, std::string>, Handler> handlers;
    auto on = [&](const std::string& sec, const std::string& key, Handler h) {
        handlers[{sec, key}] = std::move(h);
    };

    on("", "seed", [&](const std::string& k, const std::string& v) {
        cfg.seed = static_cast<uint64_t>(parse_int(v, k));
    });
    on("preprocess", "target_spacing", [&](const std::string& k, const std::string& v) {
        cfg.preprocess.target_spacing = parse_array<double, 3>(v, k);
    });
    on("preprocess", "clip_lo",
       [&](const std::string& k, const std::string& v) { cfg.preprocess.lo = parse_double(v, k); });
    on("preprocess", "clip_hi",
       [&](const std::string& k, const std::string& v) { cfg.preprocess.hi = parse_double(v, k); });
    on("preprocess", "clip_first",
       [&](const std::string& k, const std::string& v) { cfg.preprocess.clip_first = parse_bool(v, k); });

    on("mask", "mode", [&](const std::string& k, const std::string& v) {
        if (v == "static") {
            const MaskPolicy keep = cfg.mask;
            cfg.mask = MaskPolicy::static_preset();
            cfg.mask.cube_dims = keep.cube_dims;
        } else if (v == "dynamic") {
            cfg.mask.mode = MaskMode::Dynamic;
        } else {
            throw UsageError("config key '" + k + "': expected static or dynamic");
        }
    });
    on("mask", "cube_dims", [&](const std::string& k, const std::string& v) {
        cfg.mask.cube_dims = parse_array<int, 3>(v, k);
    });
    on("mask", "subsample",
       [&](const std::string& k, const std::string& v) { cfg.mask.subsample = parse_double(v, k); });
    on("mask", "inplane_range", [&](const std::string& k, const std::string& v) {
        cfg.mask.inplane_range = parse_array<int, 2>(v, k);
    });
    on("mask", "depth_range", [&](const std::string& k, const std::string& v) {
        cfg.mask.depth_range = parse_array<int, 2>(v, k);
    });
    on("mask", "subsample_range", [&](const std::string& k, const std::string& v) {
        cfg.mask.subsample_range = parse_array<double, 2>(v, k);
    });
    on("mask", "occlusion_ratio", [&](const std::string& k, const std::string& v) {
        cfg.mask.occlusion_ratio = parse_double(v, k);
    });

    on("model", "input_dims", [&](const std::string& k, const std::string& v) {
        cfg.model.input_dims = parse_array<int, 3>(v, k);
        cfg.phantom.dims = cfg.model.input_dims;
    });
    on("model", "base_channels", [&](const std::string& k, const std::string& v) {
        cfg.model.base_channels = static_cast<int>(parse_int(v, k));
    });
    on("model", "stages", [&](const std::string& k, const std::string& v) {
        cfg.model.stages = static_cast<int>(parse_int(v, k));
    });
    on("model", "convs_per_stage", [&](const std::string& k, const std::string& v) {
        cfg.model.convs_per_stage.clear();
        for (const auto& part : split_list(v))
            cfg.model.convs_per_stage.push_back(static_cast<int>(parse_int(part, k)));
    });
    on("model", "skip_connections", [&](const std::string& k, const std::string& v) {
        cfg.model.skip_connections = parse_bool(v, k);
    });

    for (const auto& [sec, target] :
         std::initializer_list<std::pair<std::string, TrainConfig*>>{{"pretrain", &cfg.pretrain_cfg},
                                                                     {"train", &cfg.train_cfg}}) {
        TrainConfig* tc = target;
        on(sec, "epochs", [tc](const std::string& k, const std::string& v) {
            tc->epochs = static_cast<int>(parse_int(v, k));
        });
        on(sec, "batch_size", [tc](const std::string& k, const std::string& v) {
            tc->batch_size = static_cast<int>(parse_int(v, k));
        });
        on(sec, "lr",
           [tc](const std::string& k, const std::string& v) { tc->lr = parse_double(v, k); });
    }
    on("pretrain", "masked_only_loss", [&](const std::string& k, const std::string& v) {
        cfg.pretrain_cfg.masked_only_loss = parse_bool(v, k);
    });

    on("eval", "bootstrap_n", [&](const std::string& k, const std::string& v) {
        cfg.bootstrap_n = static_cast<int>(parse_int(v, k));
    });
    on("eval", "threshold",
       [&](const std::string& k, const std::string& v) { cfg.threshold = parse_double(v, k); });
    on("eval", "fractions", [&](const std::string& k, const std::string& v) {
        cfg.fractions.clear();
        for (const auto& part : split_list(v)) cfg.fractions.push_back(parse_double(part, k));
    });
    on("eval", "train_split",
       [&](const std::string& k, const std::string& v) { cfg.train_split = parse_double(v, k); });
    on("eval", "fraction_from_test", [&](const std::string& k, const std::string& v) {
        cfg.fraction_from_test = parse_bool(v, k);
    });

    on("synth", "n_unlabeled", [&](const std::string& k, const std::string& v) {
        cfg.n_unlabeled = static_cast<int>(parse_int(v, k));
    });
    on("synth", "n_labeled", [&](const std::string& k, const std::string& v) {
        cfg.n_labeled = static_cast<int>(parse_int(v, k));
    });
    on("synth", "balance",
       [&](const std::string& k, const std::string& v) { cfg.balance = parse_double(v, k); });
    on("synth", "noise_amplitude", [&](const std::string& k, const std::string& v) {
        cfg.phantom.noise_amplitude = parse_double(v, k);
    });
    on("synth", "lesion_delta", [&](const std::string& k, const std::string& v) {
        cfg.phantom.lesion_delta = parse_double(v, k);
    });
    on("synth", "organ_delta", [&](const std::string& k, const std::string& v) {
        cfg.phantom.organ_delta = parse_double(v, k);
    });

    on("reproduce", "seeds", [&](const std::string& k, const std::string& v) {
        cfg.reproduce_seeds = static_cast<int>(parse_int(v, k));
    });

    // Apply in a fixed order so mask.mode is handled before its overrides.
    for (const auto& [key, handler] : handlers) {
        auto it = entries.find(key);
        if (it == entries.end()) continue;
        handler(key.first.empty() ? key.second : key.first + "." + key.second, it->second);
        entries.erase(it);
    }
    if (!entries.empty()) {
        const auto& [key, value] = *entries.begin();
        throw UsageError(origin + ": unknown config key '" +
                         (key.first.empty() ? key.second : key.first + "." + key.second) + "'");
    }

    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path);
}

}  // namespace voxmim
