#include "refocs/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "refocs/errors.hpp"

namespace refocs {

namespace {

constexpr char kMagic[8] = {'R', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put(std::ostream& out, T v) {
    put_bytes(out, &v, sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    put_bytes(out, s.data(), s.size());
}

void put_tensor(std::ostream& out, const Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    put_bytes(out, t.data(), t.size() * sizeof(double));
}

void get_bytes(std::istream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw DataError("checkpoint file is truncated");
}

template <typename T>
T get(std::istream& in) {
    T v;
    get_bytes(in, &v, sizeof v);
    return v;
}

std::string get_string(std::istream& in) {
    const auto n = get<std::uint64_t>(in);
    if (n > (1ULL << 32)) throw DataError("checkpoint string length is implausible");
    std::string s(static_cast<std::size_t>(n), '\0');
    get_bytes(in, s.data(), s.size());
    return s;
}

Tensor get_tensor(std::istream& in) {
    const auto nd = get<std::uint32_t>(in);
    if (nd > 8) throw DataError("checkpoint tensor rank is implausible");
    std::vector<int> shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < nd; ++i) {
        const auto d = get<std::int32_t>(in);
        if (d < 0) throw DataError("checkpoint tensor shape is implausible");
        shape.push_back(d);
        numel *= static_cast<std::size_t>(d);
        if (numel > (1ULL << 31)) throw DataError("checkpoint tensor is implausibly large");
    }
    Tensor t = Tensor::zeros(shape);
    get_bytes(in, t.data(), t.size() * sizeof(double));
    return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    // Write to a sibling then rename so a crash never leaves a half-written
    // checkpoint under the final name.
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
        put_bytes(out, kMagic, sizeof kMagic);
        put<std::uint32_t>(out, ckpt.version);
        put_string(out, ckpt.config_json);
        put<std::int64_t>(out, ckpt.episodes_done);
        put<std::uint64_t>(out, ckpt.tensors.size());
        for (const auto& [name, tensor] : ckpt.tensors) {
            put_string(out, name);
            put_tensor(out, tensor);
        }
        put<std::uint8_t>(out, ckpt.has_adam ? 1 : 0);
        if (ckpt.has_adam) {
            if (ckpt.adam_m.size() != ckpt.tensors.size() ||
                ckpt.adam_v.size() != ckpt.tensors.size())
                throw DataError("optimizer moments do not match the parameter list");
            put<std::int64_t>(out, ckpt.adam_t);
            for (const auto& t : ckpt.adam_m) put_tensor(out, t);
            for (const auto& t : ckpt.adam_v) put_tensor(out, t);
        }
        put<std::uint64_t>(out, ckpt.rng_states.size());
        for (const auto& s : ckpt.rng_states) {
            for (std::uint64_t w : s.words) put<std::uint64_t>(out, w);
            put<std::uint8_t>(out, s.has_cached_normal ? 1 : 0);
            put<double>(out, s.cached_normal);
        }
        if (!out) throw DataError("write failure on '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
    char magic[8];
    get_bytes(in, magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw DataError("'" + path.string() + "' is not a checkpoint file");
    Checkpoint ckpt;
    ckpt.version = get<std::uint32_t>(in);
    if (ckpt.version != 1)
        throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version));
    ckpt.config_json = get_string(in);
    ckpt.episodes_done = get<std::int64_t>(in);
    const auto n_tensors = get<std::uint64_t>(in);
    if (n_tensors > (1ULL << 20)) throw DataError("checkpoint tensor count is implausible");
    ckpt.tensors.reserve(static_cast<std::size_t>(n_tensors));
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        std::string name = get_string(in);
        ckpt.tensors.emplace_back(std::move(name), get_tensor(in));
    }
    ckpt.has_adam = get<std::uint8_t>(in) != 0;
    if (ckpt.has_adam) {
        ckpt.adam_t = get<std::int64_t>(in);
        for (std::uint64_t i = 0; i < n_tensors; ++i) ckpt.adam_m.push_back(get_tensor(in));
        for (std::uint64_t i = 0; i < n_tensors; ++i) ckpt.adam_v.push_back(get_tensor(in));
    }
    const auto n_states = get<std::uint64_t>(in);
    if (n_states > 1024) throw DataError("checkpoint rng state count is implausible");
    for (std::uint64_t i = 0; i < n_states; ++i) {
        Rng::State s;
        for (auto& w : s.words) w = get<std::uint64_t>(in);
        s.has_cached_normal = get<std::uint8_t>(in) != 0;
        s.cached_normal = get<double>(in);
        ckpt.rng_states.push_back(s);
    }
    return ckpt;
}

std::vector<std::pair<std::string, Tensor>> snapshot_params(const Model& model) {
    std::vector<std::pair<std::string, Tensor>> out;
    visit_params(model, [&](const std::string& name, const ad::Var& p) {
        out.emplace_back(name, p->val);
    });
    return out;
}

void restore_params(Model& model, const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::size_t i = 0;
    visit_params(model, [&](const std::string& name, const ad::Var& p) {
        if (i >= tensors.size()) throw DataError("checkpoint is missing parameter '" + name + "'");
        const auto& [saved_name, saved] = tensors[i];
        if (saved_name != name)
            throw DataError("checkpoint parameter order mismatch: expected '" + name + "', found '" +
                            saved_name + "'");
        if (!saved.same_shape(p->val))
            throw DataError("checkpoint parameter '" + name + "' has shape " + saved.shape_str() +
                            ", model expects " + p->val.shape_str());
        p->val = saved;
        ++i;
    });
    if (i != tensors.size()) throw DataError("checkpoint holds extra parameters");
}

}  // namespace refocs
