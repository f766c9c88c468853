#include "docdpm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace docdpm {

TrainState init_train_state(const TrainConfig& cfg, bool with_crnn) {
    validate_train_config(cfg);
    TrainState st;
    st.config = cfg;
    st.models = make_models<float>({cfg.init_net, cfg.den_net, cfg.time}, cfg.seed);
    st.opt.lr = cfg.lr;
    st.opt.beta1 = cfg.beta1;
    st.opt.beta2 = cfg.beta2;
    st.opt.clip_norm = cfg.clip_norm;
    st.rng = Rng(cfg.seed).fork(1);
    if (with_crnn) {
        st.has_crnn = true;
        Rng crnn_rng = Rng(cfg.seed).fork(2);
        st.crnn = make_crnn(st.crnn_store, crnn_rng, "crnn", cfg.crnn,
                            default_alphabet().classes());
    }
    return st;
}

namespace {

[[noreturn]] void corrupt(const std::string& path, const std::string& what) {
    throw std::runtime_error("checkpoint: " + path + ": " + what);
}

constexpr char kMagic[8] = {'D', 'O', 'C', 'D', 'P', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

// --- little-endian primitives ---------------------------------------------

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

void put_bytes(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) corrupt(path, "truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) corrupt(path, "truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::string get_bytes(std::istream& is, const std::string& path, std::uint64_t cap) {
    std::uint64_t n = get_u64(is, path);
    if (n > cap) corrupt(path, "oversized field");
    std::string s(static_cast<std::size_t>(n), '\0');
    if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) corrupt(path, "truncated");
    return s;
}

template <typename T>
void put_blob(std::ostream& os, const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    put_bytes(os, name);
    os.put(std::is_same_v<T, float> ? 0 : 1);
    put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) put_u32(os, static_cast<std::uint32_t>(t.dim(d)));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if constexpr (std::is_same_v<T, float>) {
            put_u32(os, std::bit_cast<std::uint32_t>(t[i]));
        } else {
            put_u64(os, std::bit_cast<std::uint64_t>(t[i]));
        }
    }
}

struct RawBlob {
    int dtype = 0;  // 0 = f32, 1 = f64
    std::vector<int> shape;
    Tensor<float> f32;
};

RawBlob get_blob(std::istream& is, const std::string& path) {
    RawBlob b;
    int dt = is.get();
    if (dt != 0 && dt != 1) corrupt(path, "unknown blob dtype");
    b.dtype = dt;
    if (b.dtype != 0) corrupt(path, "unexpected f64 blob");  // format v1 stores f32 only
    std::uint32_t ndim = get_u32(is, path);
    if (ndim > 8) corrupt(path, "blob rank too large");
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
        std::uint32_t dim = get_u32(is, path);
        if (dim == 0 || dim > (1u << 24)) corrupt(path, "bad blob dimension");
        b.shape.push_back(static_cast<int>(dim));
        numel *= dim;
        if (numel > (std::int64_t{1} << 31)) corrupt(path, "blob too large");
    }
    b.f32 = Tensor<float>(b.shape);
    for (std::int64_t i = 0; i < b.f32.numel(); ++i)
        b.f32[i] = std::bit_cast<float>(get_u32(is, path));
    return b;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
        os.write(kMagic, 8);
        put_u32(os, kVersion);
        put_u64(os, static_cast<std::uint64_t>(state.iteration));
        put_u64(os, static_cast<std::uint64_t>(state.opt.iteration()));
        os.put(state.has_crnn ? 1 : 0);
        put_bytes(os, state.config.to_text());
        put_bytes(os, state.rng.serialize());

        const auto& opt = state.opt;
        const auto& params = state.models.store.items();
        bool with_moments = opt.moment1().size() == params.size();
        std::uint64_t blobs = params.size() + (with_moments ? 2 * params.size() : 0) +
                              (state.has_crnn ? state.crnn_store.items().size() : 0);
        put_u64(os, blobs);
        for (const auto& [name, p] : params) put_blob(os, name, p->value);
        if (with_moments)
            for (std::size_t i = 0; i < params.size(); ++i) {
                put_blob(os, "opt.m." + params[i].first, opt.moment1()[i]);
                put_blob(os, "opt.v." + params[i].first, opt.moment2()[i]);
            }
        if (state.has_crnn)
            for (const auto& [name, p] : state.crnn_store.items())
                put_blob(os, name, p->value);
        if (!os.good()) throw std::runtime_error("checkpoint: write failed for " + path);
    }
    std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        corrupt(path, "not a checkpoint file");
    std::uint32_t version = get_u32(is, path);
    if (version != kVersion)
        corrupt(path, "unsupported format version " + std::to_string(version));
    std::int64_t iteration = static_cast<std::int64_t>(get_u64(is, path));
    std::int64_t opt_iter = static_cast<std::int64_t>(get_u64(is, path));
    int has_crnn = is.get();
    if (has_crnn != 0 && has_crnn != 1) corrupt(path, "bad recognizer flag");
    std::string config_text = get_bytes(is, path, 1 << 20);
    std::string rng_text = get_bytes(is, path, 1 << 20);

    TrainConfig cfg;
    try {
        cfg = parse_train_config(config_text, path + " (embedded config)");
    } catch (const ConfigError& e) {
        corrupt(path, std::string("bad config snapshot: ") + e.what());
    }

    TrainState st = init_train_state(cfg, has_crnn == 1);
    st.iteration = iteration;
    st.rng.deserialize(rng_text);

    std::map<std::string, RawBlob> blobs;
    std::uint64_t count = get_u64(is, path);
    if (count > 100000) corrupt(path, "blob count too large");
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = get_bytes(is, path, 4096);
        if (blobs.count(name)) corrupt(path, "duplicate blob '" + name + "'");
        blobs.emplace(name, get_blob(is, path));
    }

    std::set<std::string> used;
    auto take = [&](const std::string& name) -> const RawBlob& {
        auto it = blobs.find(name);
        if (it == blobs.end()) corrupt(path, "missing blob '" + name + "'");
        used.insert(name);
        return it->second;
    };
    auto restore_into = [&](Tensor<float>& dst, const std::string& name) {
        const RawBlob& b = take(name);
        if (b.shape != dst.shape()) corrupt(path, "shape mismatch for blob '" + name + "'");
        dst = b.f32;
    };

    for (const auto& [name, p] : st.models.store.items()) restore_into(p->value, name);

    bool with_moments = blobs.count("opt.m." + st.models.store.items().front().first) > 0;
    if (with_moments) {
        auto& m = st.opt.moment1();
        auto& v = st.opt.moment2();
        m.clear();
        v.clear();
        for (const auto& [name, p] : st.models.store.items()) {
            Tensor<float> mt(p->value.shape()), vt(p->value.shape());
            restore_into(mt, "opt.m." + name);
            restore_into(vt, "opt.v." + name);
            m.push_back(std::move(mt));
            v.push_back(std::move(vt));
        }
        st.opt.set_iteration(opt_iter);
    } else if (opt_iter != 0) {
        corrupt(path, "optimizer step count without moment blobs");
    }

    if (st.has_crnn)
        for (const auto& [name, p] : st.crnn_store.items()) restore_into(p->value, name);

    for (const auto& [name, b] : blobs) {
        (void)b;
        if (!used.count(name)) corrupt(path, "unexpected blob '" + name + "'");
    }
    if (is.peek() != std::char_traits<char>::eof()) corrupt(path, "trailing bytes");
    return st;
}

}  // namespace docdpm
