#include "augcl/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "augcl/errors.hpp"

namespace augcl {

namespace {

using nlohmann::json;

std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

// Typed access to one JSON object that remembers which keys were consumed.
class Reader {
public:
    Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "must be an object");
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return obj_.at(key);
    }

    void number(const std::string& key, double& out) {
        if (!has(key)) return;
        const json& v = raw(key);
        if (!v.is_number()) throw ConfigError(field(key), "must be a number");
        out = v.get<double>();
        if (!std::isfinite(out)) throw ConfigError(field(key), "must be finite");
    }

    void count(const std::string& key, std::size_t& out) {
        if (!has(key)) return;
        const json& v = raw(key);
        if (v.is_number_integer() && v.get<long long>() < 0) throw ConfigError(field(key), "must be non-negative");
        if (!v.is_number_integer()) throw ConfigError(field(key), "must be a non-negative integer");
        out = v.get<std::size_t>();
    }

    void seed(const std::string& key, std::uint64_t& out) {
        if (!has(key)) return;
        const json& v = raw(key);
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
            throw ConfigError(field(key), "must be a non-negative integer");
        out = v.get<std::uint64_t>();
    }

    void boolean(const std::string& key, bool& out) {
        if (!has(key)) return;
        const json& v = raw(key);
        if (!v.is_boolean()) throw ConfigError(field(key), "must be true or false");
        out = v.get<bool>();
    }

    std::optional<std::string> string(const std::string& key) {
        if (!has(key)) return std::nullopt;
        const json& v = raw(key);
        if (!v.is_string()) throw ConfigError(field(key), "must be a string");
        return v.get<std::string>();
    }

    void range(const std::string& key, Range& out) {
        if (!has(key)) return;
        const json& v = raw(key);
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
            throw ConfigError(field(key), "must be a [lo, hi] pair of numbers");
        out = {v[0].get<double>(), v[1].get<double>()};
    }

    Reader child(const std::string& key) { return Reader(raw(key), field(key)); }

    std::string field(const std::string& key) const { return join(path_, key); }

    void finish() const {
        for (const auto& [key, value] : obj_.items())
            if (!used_.contains(key)) throw ConfigError(field(key), "unknown key");
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> used_;
};

void read_augment(Reader r, AugmentationParams& a) {
    r.boolean("base_crop", a.base_crop);
    if (r.has("crop")) {
        Reader c = r.child("crop");
        c.range("scale", a.crop.scale);
        c.range("aspect", a.crop.aspect);
        c.number("p", a.crop.p);
        c.finish();
    }
    if (r.has("flip")) {
        Reader c = r.child("flip");
        c.number("p", a.flip.p);
        c.finish();
    }
    if (r.has("jitter")) {
        Reader c = r.child("jitter");
        c.range("brightness", a.jitter.brightness);
        c.range("contrast", a.jitter.contrast);
        c.range("saturation", a.jitter.saturation);
        c.range("hue", a.jitter.hue);
        c.number("p", a.jitter.p);
        c.finish();
    }
    if (r.has("gaussian_noise")) {
        Reader c = r.child("gaussian_noise");
        c.number("sigma", a.noise.sigma);
        c.number("p", a.noise.p);
        c.finish();
    }
    if (r.has("grayscale")) {
        Reader c = r.child("grayscale");
        c.number("p", a.grayscale.p);
        c.finish();
    }
    if (r.has("perspective")) {
        Reader c = r.child("perspective");
        c.number("distortion", a.perspective.distortion);
        c.number("p", a.perspective.p);
        c.finish();
    }
    if (r.has("affine")) {
        Reader c = r.child("affine");
        c.range("degrees", a.affine.degrees);
        c.number("translate", a.affine.translate);
        c.range("scale", a.affine.scale);
        c.range("shear", a.affine.shear);
        c.number("p", a.affine.p);
        c.finish();
    }
    if (r.has("rotation")) {
        Reader c = r.child("rotation");
        c.range("degrees", a.rotation.degrees);
        c.number("p", a.rotation.p);
        c.finish();
    }
    r.finish();
}

json range_json(const Range& r) {
    return json::array({r.lo, r.hi});
}

json augment_json(const AugmentationParams& a) {
    json j;
    j["base_crop"] = a.base_crop;
    j["crop"] = {{"scale", range_json(a.crop.scale)}, {"aspect", range_json(a.crop.aspect)}, {"p", a.crop.p}};
    j["flip"] = {{"p", a.flip.p}};
    j["jitter"] = {{"brightness", range_json(a.jitter.brightness)},
                   {"contrast", range_json(a.jitter.contrast)},
                   {"saturation", range_json(a.jitter.saturation)},
                   {"hue", range_json(a.jitter.hue)},
                   {"p", a.jitter.p}};
    j["gaussian_noise"] = {{"sigma", a.noise.sigma}, {"p", a.noise.p}};
    j["grayscale"] = {{"p", a.grayscale.p}};
    j["perspective"] = {{"distortion", a.perspective.distortion}, {"p", a.perspective.p}};
    j["affine"] = {{"degrees", range_json(a.affine.degrees)},
                   {"translate", a.affine.translate},
                   {"scale", range_json(a.affine.scale)},
                   {"shear", range_json(a.affine.shear)},
                   {"p", a.affine.p}};
    j["rotation"] = {{"degrees", range_json(a.rotation.degrees)}, {"p", a.rotation.p}};
    return j;
}

Curriculum default_curriculum(DatasetName d) {
    return *builtin_curriculum(d == DatasetName::mnist ? "B1" : "A1");
}

}  // namespace

std::string_view to_string(RunModes modes) {
    switch (modes) {
        case RunModes::both: return "both";
        case RunModes::cl: return "cl";
        case RunModes::mtl: return "mtl";
    }
    return "both";
}

ExperimentConfig default_config(DatasetName dataset) {
    ExperimentConfig c;
    c.train.dataset = dataset;
    c.train.curriculum = default_curriculum(dataset);
    return c;
}

ExperimentConfig config_from_json(const json& doc) {
    Reader r(doc, "");
    const auto dataset_text = r.string("dataset");
    if (!dataset_text) throw ConfigError("dataset", "is required");
    const auto dataset = parse_dataset_name(*dataset_text);
    if (!dataset) throw ConfigError("dataset", "must be one of mnist, cifar10, cifar100");
    ExperimentConfig c = default_config(*dataset);
    TrainConfig& t = c.train;

    if (auto arch = r.string("arch")) {
        const auto a = parse_arch(*arch);
        if (!a) throw ConfigError("arch", "must be one of mlp-s, conv-s, resnet18");
        t.arch = *a;
    }
    r.count("d_proj", t.d_proj);
    r.count("batch_size", t.batch_size);
    r.number("lr", t.lr);
    r.number("lambda", t.lambda);
    r.number("gamma", t.gamma);
    r.count("epochs_per_task", t.epochs_per_task);
    r.seed("seed", t.seed);
    r.count("run_count", t.run_count);
    r.boolean("persist_predictor", t.persist_predictor);
    if (auto s = r.string("mtl_sampling")) {
        const auto m = parse_mtl_sampling(*s);
        if (!m) throw ConfigError("mtl_sampling", "must be per-batch or per-sample");
        t.mtl_sampling = *m;
    }
    if (r.has("curriculum")) {
        const json& cur = r.raw("curriculum");
        if (cur.is_string()) {
            const auto b = builtin_curriculum(cur.get<std::string>());
            if (!b) throw ConfigError("curriculum", "unknown curriculum id '" + cur.get<std::string>() + "'");
            t.curriculum = *b;
        } else if (cur.is_array()) {
            t.curriculum = {"custom", {}};
            for (std::size_t i = 0; i < cur.size(); ++i) {
                const std::string field = "curriculum[" + std::to_string(i) + "]";
                if (!cur[i].is_string()) throw ConfigError(field, "must be an augmentation name");
                const auto k = parse_kind(cur[i].get<std::string>());
                if (!k) throw ConfigError(field, "unknown augmentation '" + cur[i].get<std::string>() + "'");
                t.curriculum.tasks.push_back(*k);
            }
        } else {
            throw ConfigError("curriculum", "must be a curriculum id or a list of augmentation names");
        }
    }
    if (r.has("augment")) read_augment(r.child("augment"), t.augment);
    if (r.has("probe")) {
        Reader p = r.child("probe");
        p.number("lr", t.probe.lr);
        p.count("epochs", t.probe.epochs);
        p.count("batch_size", t.probe.batch_size);
        p.finish();
    }
    if (auto d = r.string("data_dir")) c.data_dir = *d;
    if (auto o = r.string("output_dir")) {
        if (o->empty()) throw ConfigError("output_dir", "must not be empty");
        c.output_dir = *o;
    }
    r.count("train_subset", c.train_subset);
    r.count("test_subset", c.test_subset);
    r.number("val_fraction", c.val_fraction);
    if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) throw ConfigError("val_fraction", "must lie in [0, 1)");
    if (auto m = r.string("modes")) {
        if (*m == "both") c.modes = RunModes::both;
        else if (*m == "cl") c.modes = RunModes::cl;
        else if (*m == "mtl") c.modes = RunModes::mtl;
        else throw ConfigError("modes", "must be both, cl or mtl");
    }
    r.finish();
    t.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", "invalid JSON in " + path.string() + ": " + e.what());
    }
    return config_from_json(doc);
}

json config_to_json(const ExperimentConfig& c) {
    const TrainConfig& t = c.train;
    json j;
    j["dataset"] = std::string(to_string(t.dataset));
    j["arch"] = std::string(to_string(t.arch));
    j["d_proj"] = t.d_proj;
    j["batch_size"] = t.batch_size;
    j["lr"] = t.lr;
    j["lambda"] = t.lambda;
    j["gamma"] = t.gamma;
    j["epochs_per_task"] = t.epochs_per_task;
    j["seed"] = t.seed;
    j["run_count"] = t.run_count;
    j["persist_predictor"] = t.persist_predictor;
    j["mtl_sampling"] = std::string(to_string(t.mtl_sampling));
    const auto builtin = builtin_curriculum(t.curriculum.id);
    if (builtin && *builtin == t.curriculum) {
        j["curriculum"] = t.curriculum.id;
    } else {
        json tasks = json::array();
        for (AugmentationKind k : t.curriculum.tasks) tasks.push_back(std::string(to_string(k)));
        j["curriculum"] = tasks;
    }
    j["augment"] = augment_json(t.augment);
    j["probe"] = {{"lr", t.probe.lr}, {"epochs", t.probe.epochs}, {"batch_size", t.probe.batch_size}};
    if (c.data_dir) j["data_dir"] = *c.data_dir;
    j["output_dir"] = c.output_dir;
    j["train_subset"] = c.train_subset;
    j["test_subset"] = c.test_subset;
    j["val_fraction"] = c.val_fraction;
    j["modes"] = std::string(to_string(c.modes));
    return j;
}

std::string canonical_config(const ExperimentConfig& config) {
    return config_to_json(config).dump(2) + "\n";
}

std::filesystem::path resolve_data_dir(const ExperimentConfig& config) {
    if (config.data_dir) return *config.data_dir;
    if (const char* env = std::getenv("AUGCL_DATA_DIR"); env && *env) {
        const std::filesystem::path root(env);
        const std::filesystem::path sub = root / std::string(to_string(config.train.dataset));
        if (std::filesystem::is_directory(sub)) return sub;
        return root;
    }
    throw DataMissingError("no data_dir in config and AUGCL_DATA_DIR is not set");
}

DatasetPair load_experiment_data(const ExperimentConfig& config) {
    const std::filesystem::path dir = resolve_data_dir(config);
    if (!std::filesystem::is_directory(dir)) throw DataMissingError("data directory not found: " + dir.string());
    DatasetPair data = load_dataset(config.train.dataset, dir);
    if (config.train_subset) data.train = data.train.head(config.train_subset);
    if (config.test_subset) data.test = data.test.head(config.test_subset);
    return data;
}

}  // namespace augcl
