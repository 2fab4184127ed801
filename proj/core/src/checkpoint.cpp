#include "augcl/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "augcl/errors.hpp"

namespace augcl {

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'U', 'G', 'C', 'L', 'C', 'K', '1'};
constexpr std::uint64_t kMaxNameLength = 4096;

template <typename U>
void write_le(std::ostream& out, U value) {
    std::array<char, sizeof(U)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in, const std::string& path) {
    std::array<char, sizeof(U)> bytes;
    if (!in.read(bytes.data(), bytes.size())) throw LengthError("checkpoint truncated: " + path);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    U value;
    std::memcpy(&value, bytes.data(), sizeof(U));
    return value;
}

template <typename T>
void write_array(std::ostream& out, const std::string& name, std::span<const T> values) {
    write_le<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint64_t>(out, values.size());
    for (T v : values) write_le<T>(out, v);
}

template <typename T>
void read_array(std::istream& in, const std::string& path, const std::string& expected_name, std::span<T> values) {
    const auto len = read_le<std::uint64_t>(in, path);
    if (len > kMaxNameLength) throw FormatError("checkpoint array name too long in " + path);
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw LengthError("checkpoint truncated: " + path);
    if (name != expected_name)
        throw FormatError("checkpoint " + path + ": expected array '" + expected_name + "', found '" + name + "'");
    const auto count = read_le<std::uint64_t>(in, path);
    if (count != values.size())
        throw FormatError("checkpoint " + path + ": array '" + name + "' has " + std::to_string(count) +
                          " entries, model expects " + std::to_string(values.size()));
    for (T& v : values) v = read_le<T>(in, path);
}

std::uint32_t arch_code(Arch a) {
    return static_cast<std::uint32_t>(a);
}

CheckpointHeader read_header(std::istream& in, const std::string& path) {
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size())) throw LengthError("checkpoint truncated: " + path);
    if (magic != kMagic) throw FormatError("not a checkpoint file: " + path);
    CheckpointHeader h;
    h.version = read_le<std::uint32_t>(in, path);
    if (h.version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(h.version) + " in " + path);
    const auto arch = read_le<std::uint32_t>(in, path);
    if (arch > arch_code(Arch::resnet18)) throw FormatError("unknown architecture id in " + path);
    h.arch = static_cast<Arch>(arch);
    h.input.channels = read_le<std::uint64_t>(in, path);
    h.input.height = read_le<std::uint64_t>(in, path);
    h.input.width = read_le<std::uint64_t>(in, path);
    h.d_proj = read_le<std::uint64_t>(in, path);
    h.d_feat = read_le<std::uint64_t>(in, path);
    h.seed = read_le<std::uint64_t>(in, path);
    h.task_index = read_le<std::uint32_t>(in, path);
    h.dtype_size = read_le<std::uint32_t>(in, path);
    return h;
}

}  // namespace

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const EncoderModel<T>& model, std::uint32_t task_index) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + tmp.string());
        out.write(kMagic.data(), kMagic.size());
        write_le<std::uint32_t>(out, kCheckpointVersion);
        write_le<std::uint32_t>(out, arch_code(model.arch()));
        write_le<std::uint64_t>(out, model.input().channels);
        write_le<std::uint64_t>(out, model.input().height);
        write_le<std::uint64_t>(out, model.input().width);
        write_le<std::uint64_t>(out, model.d_proj());
        write_le<std::uint64_t>(out, model.d_feat());
        write_le<std::uint64_t>(out, model.seed());
        write_le<std::uint32_t>(out, task_index);
        write_le<std::uint32_t>(out, sizeof(T));

        for (const Parameter<T>* p : model.parameters()) write_array<T>(out, p->name, p->value.data());
        const auto buffers = model.buffers();
        for (std::size_t i = 0; i < buffers.size(); ++i) {
            write_array<T>(out, "buffer." + std::to_string(i) + ".running_mean", buffers[i]->running_mean);
            write_array<T>(out, "buffer." + std::to_string(i) + ".running_var", buffers[i]->running_var);
        }
        if (!out.flush()) throw Error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataMissingError("checkpoint not found: " + path.string());
    return read_header(in, path.string());
}

template <std::floating_point T>
EncoderModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointHeader* header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataMissingError("checkpoint not found: " + path.string());
    const std::string p = path.string();
    const CheckpointHeader h = read_header(in, p);
    if (h.dtype_size != sizeof(T))
        throw FormatError("checkpoint " + p + " stores " + std::to_string(h.dtype_size) + "-byte values, expected " +
                          std::to_string(sizeof(T)));
    EncoderModel<T> model(h.arch, h.input, h.d_proj, h.seed);
    if (model.d_feat() != h.d_feat) throw FormatError("checkpoint " + p + ": feature width mismatch");
    for (Parameter<T>* param : model.parameters()) read_array<T>(in, p, param->name, param->value.data());
    const auto buffers = model.buffers();
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        read_array<T>(in, p, "buffer." + std::to_string(i) + ".running_mean", std::span<T>(buffers[i]->running_mean));
        read_array<T>(in, p, "buffer." + std::to_string(i) + ".running_var", std::span<T>(buffers[i]->running_var));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint " + p);
    for (Parameter<T>* param : model.parameters()) param->value.check_finite("checkpoint " + p);
    if (header) *header = h;
    return model;
}

template void save_checkpoint<float>(const std::filesystem::path&, const EncoderModel<float>&, std::uint32_t);
template void save_checkpoint<double>(const std::filesystem::path&, const EncoderModel<double>&, std::uint32_t);
template EncoderModel<float> load_checkpoint<float>(const std::filesystem::path&, CheckpointHeader*);
template EncoderModel<double> load_checkpoint<double>(const std::filesystem::path&, CheckpointHeader*);

}  // namespace augcl
