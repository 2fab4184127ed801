#include "augcl/eval.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "augcl/adam.hpp"
#include "augcl/errors.hpp"
#include "augcl/format.hpp"
#include "augcl/ops.hpp"

namespace augcl {

namespace {

constexpr std::array<char, 8> kFeatureMagic = {'A', 'U', 'G', 'C', 'L', 'F', 'T', '1'};

Tensor<float> gather_rows(const Tensor<float>& m, std::span<const std::size_t> rows) {
    const std::size_t d = m.dim(1);
    std::vector<float> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(i * d));
    return Tensor<float>({rows.size(), d}, std::move(out));
}

}  // namespace

std::string_view to_string(LearningMode mode) {
    return mode == LearningMode::cl ? "CL" : "MTL";
}

std::optional<LearningMode> parse_learning_mode(std::string_view text) {
    if (text == "CL" || text == "cl") return LearningMode::cl;
    if (text == "MTL" || text == "mtl") return LearningMode::mtl;
    return std::nullopt;
}

ProbeHead::ProbeHead(std::size_t d_feat, int class_count, std::uint64_t seed) : d_feat_(d_feat), class_count_(class_count) {
    if (d_feat == 0 || class_count < 2) throw ContractError("probe needs a positive width and at least two classes");
    Rng rng = make_rng(seed, Stream::probe_init);
    layer_ = Linear<float>("probe", d_feat, static_cast<std::size_t>(class_count), rng);
}

Tensor<float> ProbeHead::logits(const Tensor<float>& features) const {
    if (features.rank() != 2 || features.dim(1) != d_feat_)
        throw DimensionError("probe expects [n x " + std::to_string(d_feat_) + "] features, got " +
                             shape_string(features.shape()));
    Tape<float> tape(GradMode::disabled);
    return layer_(tape, tape.constant(features), Mode::eval).value();
}

ProbeHead train_probe(const Tensor<float>& features, std::span<const int> labels, int class_count,
                      const ProbeConfig& config, std::uint64_t seed) {
    if (features.rank() != 2) throw DimensionError("probe features must be [n x d]");
    if (features.dim(0) != labels.size()) throw DimensionError("probe features and labels differ in length");
    if (config.epochs == 0 || config.batch_size == 0) throw ContractError("probe epochs and batch size must be positive");
    ProbeHead probe(features.dim(1), class_count, seed);
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    BatchIterator batches(all, config.batch_size, false, derive_seed(seed, Stream::probe_batches));
    std::array<Parameter<float>*, 2> params{&probe.layer().weight, &probe.layer().bias};
    const AdamOptions adam{.lr = config.lr};
    const std::size_t steps = config.epochs * batches.batches_per_epoch();
    std::vector<int> batch_labels;
    for (std::size_t step = 0; step < steps; ++step) {
        const std::vector<std::size_t> idx = batches.next_indices();
        batch_labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) batch_labels[i] = labels[idx[i]];
        Tape<float> tape;
        Var<float> logits = probe.layer()(tape, tape.constant(gather_rows(features, idx)), Mode::train);
        tape.backward(softmax_cross_entropy(logits, std::span<const int>(batch_labels)));
        adam_step<float>(params, adam);
    }
    return probe;
}

ProbeHead train_probe(const FrozenEncoder<float>& encoder, const Dataset& data, std::span<const std::size_t> indices,
                      const ProbeConfig& config, std::uint64_t seed) {
    const Tensor<float> features = encoder.features(gather_images(data, indices));
    const std::vector<int> labels = gather_labels(data, indices);
    return train_probe(features, labels, data.class_count, config, seed);
}

double accuracy(const Tensor<float>& logits, std::span<const int> labels) {
    if (labels.empty()) throw ContractError("accuracy of an empty set is undefined");
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw DimensionError("logits " + shape_string(logits.shape()) + " do not match " +
                             std::to_string(labels.size()) + " labels");
    const std::size_t k = logits.dim(1);
    const auto v = logits.data();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (v[i * k + j] > v[i * k + best]) best = j;
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const ProbeHead& probe, const FrozenEncoder<float>& encoder, const Tensor<float>& images,
                std::span<const int> labels) {
    if (labels.empty()) throw ContractError("accuracy of an empty set is undefined");
    return accuracy(probe.logits(encoder.features(images)), labels);
}

// ---- feature cache ------------------------------------------------------------

void write_feature_file(const std::filesystem::path& path, const Tensor<float>& features) {
    std::filesystem::path tmp = path;
    tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write feature cache " + tmp.string());
        out.write(kFeatureMagic.data(), kFeatureMagic.size());
        const std::uint64_t dims[2] = {features.dim(0), features.dim(1)};
        out.write(reinterpret_cast<const char*>(dims), sizeof dims);
        out.write(reinterpret_cast<const char*>(features.data().data()),
                  static_cast<std::streamsize>(features.numel() * sizeof(float)));
        if (!out.flush()) throw Error("failed writing feature cache " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Tensor<float> read_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataMissingError("feature cache missing: " + path.string());
    std::array<char, 8> magic{};
    std::uint64_t dims[2] = {0, 0};
    if (!in.read(magic.data(), magic.size()) || magic != kFeatureMagic)
        throw FormatError("not a feature cache file: " + path.string());
    if (!in.read(reinterpret_cast<char*>(dims), sizeof dims)) throw LengthError("feature cache truncated: " + path.string());
    std::vector<float> data(dims[0] * dims[1]);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float))))
        throw LengthError("feature cache truncated: " + path.string());
    Tensor<float> t({dims[0], dims[1]}, std::move(data));
    t.check_finite("feature cache");
    return t;
}

FeatureCache::FeatureCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::filesystem::path FeatureCache::path_for(std::uint64_t checksum, const std::string& tag) const {
    std::ostringstream name;
    name << std::hex << std::setw(16) << std::setfill('0') << checksum << '_' << tag << ".feat";
    return dir_ / name.str();
}

Tensor<float> FeatureCache::features(const FrozenEncoder<float>& encoder, const Dataset& data,
                                     std::span<const std::size_t> indices, const std::string& tag) {
    std::uint64_t key = encoder.checksum();
    key = fnv1a(indices.data(), indices.size_bytes(), key);
    const std::filesystem::path file = path_for(key, tag);
    if (std::filesystem::exists(file)) {
        Tensor<float> cached = read_feature_file(file);
        if (cached.dim(0) == indices.size() && cached.dim(1) == encoder.model().d_feat()) {
            ++hits_;
            return cached;
        }
    }
    Tensor<float> computed = encoder.features(gather_images(data, indices));
    write_feature_file(file, computed);
    return computed;
}

ProbeOutcome evaluate_encoder(const FrozenEncoder<float>& encoder, const DatasetPair& data, const Split& split,
                              const ProbeConfig& config, std::uint64_t seed, FeatureCache* cache) {
    auto extract = [&](const Dataset& d, std::span<const std::size_t> idx, const std::string& tag) {
        return cache ? cache->features(encoder, d, idx, tag) : encoder.features(gather_images(d, idx));
    };
    const Tensor<float> train_features = extract(data.train, split.train_indices, "train");
    const ProbeHead probe =
        train_probe(train_features, gather_labels(data.train, split.train_indices), data.train.class_count, config, seed);
    ProbeOutcome outcome;
    outcome.test_accuracy =
        accuracy(probe.logits(extract(data.test, split.test_indices, "test")), gather_labels(data.test, split.test_indices));
    if (!split.val_indices.empty())
        outcome.val_accuracy = accuracy(probe.logits(extract(data.train, split.val_indices, "val")),
                                        gather_labels(data.train, split.val_indices));
    return outcome;
}

// ---- negative transfer ---------------------------------------------------------

NegativeTransferStat negative_transfer(std::span<const double> accuracies) {
    if (accuracies.size() < 2) throw ContractError("negative transfer needs at least two accuracies");
    NegativeTransferStat stat;
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < accuracies.size(); ++k) {
        const double delta = accuracies[k + 1] - accuracies[k];
        if (delta < 0.0) {
            stat.drop_events.push_back({k + 1, delta});
            total += delta;
        }
    }
    if (!stat.drop_events.empty()) stat.average_drop = total / static_cast<double>(stat.drop_events.size());
    return stat;
}

NegativeTransferSummary summarize_negative_transfer(std::span<const NegativeTransferStat> stats) {
    NegativeTransferSummary s;
    s.sequence_count = stats.size();
    double averages = 0.0, pooled = 0.0;
    for (const NegativeTransferStat& st : stats) {
        averages += st.average_drop;
        for (const DropEvent& e : st.drop_events) pooled += e.delta;
        s.event_count += st.drop_events.size();
    }
    if (!stats.empty()) s.mean_of_averages = averages / static_cast<double>(stats.size());
    if (s.event_count > 0) s.pooled = pooled / static_cast<double>(s.event_count);
    return s;
}

// ---- record files ------------------------------------------------------------

namespace {

constexpr std::string_view kEvalHeader = "mode,prefix_length,seed,probe_accuracy,val_accuracy";

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

void write_eval_records(const std::filesystem::path& file, std::span<const EvalRecord> records) {
    std::filesystem::path tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << kEvalHeader << '\n';
        for (const EvalRecord& r : records)
            out << to_string(r.mode) << ',' << r.prefix_length << ',' << r.seed << ',' << format_double(r.probe_accuracy)
                << ',' << format_double(r.val_accuracy) << '\n';
        if (!out.flush()) throw Error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

std::vector<EvalRecord> read_eval_records(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw DataMissingError("missing record file " + file.string());
    std::string line;
    if (!std::getline(in, line) || line != kEvalHeader) throw FormatError(file.string() + ": bad header");
    std::vector<EvalRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        const auto bad = [&] { return FormatError(file.string() + ":" + std::to_string(line_no) + ": malformed record"); };
        if (cells.size() != 5) throw bad();
        EvalRecord r;
        const auto mode = parse_learning_mode(cells[0]);
        const auto k = parse_integer<std::size_t>(cells[1]);
        const auto seed = parse_integer<std::uint64_t>(cells[2]);
        const auto test = parse_double(cells[3]);
        const auto val = parse_double(cells[4]);
        if (!mode || !k || !seed || !test || !val || *k == 0 || *test < 0 || *test > 100 || *val < 0 || *val > 100)
            throw bad();
        r.mode = *mode;
        r.prefix_length = *k;
        r.seed = *seed;
        r.probe_accuracy = *test;
        r.val_accuracy = *val;
        records.push_back(r);
    }
    return records;
}

}  // namespace augcl
