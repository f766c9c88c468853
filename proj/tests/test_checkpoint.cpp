#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "docdpm/checkpoint.hpp"
#include "docdpm/freq.hpp"
#include "docdpm/schedule.hpp"

using namespace docdpm;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_cfg() {
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.schedule_steps = 20;
    cfg.init_net.width = 4;
    cfg.den_net.width = 4;
    cfg.time.dim = 4;
    cfg.time.mlp_hidden = 8;
    cfg.batch = 2;
    cfg.patch = 16;
    cfg.train_steps = 4;
    cfg.crnn.height = 8;
    cfg.crnn.c1 = 2;
    cfg.crnn.c2 = 3;
    cfg.crnn.hidden = 4;
    validate_train_config(cfg);
    return cfg;
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("docdpm_ckpt_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Batch<float> random_batch(Rng& rng, int n, int p) {
    Batch<float> b;
    b.gt = rng.normal_tensor<float>({n, 1, p, p});
    b.degraded = rng.normal_tensor<float>({n, 1, p, p});
    return b;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(),
                       sizeof(float) * static_cast<std::size_t>(a.numel())) == 0;
}

bool same_state_bits(const TrainState& a, const TrainState& b) {
    if (a.iteration != b.iteration) return false;
    if (a.rng.serialize() != b.rng.serialize()) return false;
    if (a.opt.iteration() != b.opt.iteration()) return false;
    const auto& ia = a.models.store.items();
    const auto& ib = b.models.store.items();
    if (ia.size() != ib.size()) return false;
    for (std::size_t i = 0; i < ia.size(); ++i) {
        if (ia[i].first != ib[i].first) return false;
        if (!same_bits(ia[i].second->value, ib[i].second->value)) return false;
    }
    const auto &ma = a.opt.moment1(), &mb = b.opt.moment1();
    const auto &va = a.opt.moment2(), &vb = b.opt.moment2();
    if (ma.size() != mb.size() || va.size() != vb.size()) return false;
    for (std::size_t i = 0; i < ma.size(); ++i)
        if (!same_bits(ma[i], mb[i]) || !same_bits(va[i], vb[i])) return false;
    return true;
}

void clobber_byte(const std::string& path, std::streamoff offset, char value) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(offset);
    f.put(value);
}

bool load_fails_with(const std::string& path, const std::string& needle) {
    try {
        load_checkpoint(path);
    } catch (const std::runtime_error& e) {
        if (std::string(e.what()).find(needle) != std::string::npos) return true;
        MESSAGE("error was: " << e.what());
        return false;
    }
    MESSAGE("load unexpectedly succeeded");
    return false;
}

}  // namespace

TEST_CASE("a fresh state round trips bitwise") {
    TempDir dir;
    TrainState st = init_train_state(tiny_cfg());
    CHECK(st.iteration == 0);
    CHECK_FALSE(st.has_crnn);
    save_checkpoint(dir.file("a.ckpt"), st);

    TrainState back = load_checkpoint(dir.file("a.ckpt"));
    CHECK(back.config.to_text() == st.config.to_text());
    CHECK(back.opt.lr == st.opt.lr);
    CHECK(back.opt.moment1().empty());
    CHECK(same_state_bits(st, back));
}

TEST_CASE("optimizer moments and the rng stream survive a round trip") {
    TempDir dir;
    TrainState st = init_train_state(tiny_cfg());
    NoiseSchedule sched = make_linear_schedule(st.config.schedule_steps, st.config.beta_start,
                                               st.config.beta_end);
    FilterPair fp = make_filter_pair();
    Rng data(7);
    for (int i = 0; i < 2; ++i) {
        train_step(st.models, st.opt, st.rng, random_batch(data, 2, 16), sched, fp);
        ++st.iteration;
    }
    CHECK(st.opt.iteration() == 2);
    save_checkpoint(dir.file("b.ckpt"), st);

    TrainState back = load_checkpoint(dir.file("b.ckpt"));
    CHECK(back.opt.iteration() == 2);
    CHECK(back.opt.moment1().size() == st.models.store.items().size());
    CHECK(same_state_bits(st, back));
}

TEST_CASE("training interrupted by a save/load continues bit-identically") {
    TempDir dir;
    TrainConfig cfg = tiny_cfg();
    NoiseSchedule sched = make_linear_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);
    FilterPair fp = make_filter_pair();

    TrainState a = init_train_state(cfg);
    Rng data_a(7);
    for (int i = 0; i < 2; ++i) {
        train_step(a.models, a.opt, a.rng, random_batch(data_a, 2, 16), sched, fp);
        ++a.iteration;
    }
    save_checkpoint(dir.file("mid.ckpt"), a);
    for (int i = 0; i < 2; ++i) {
        train_step(a.models, a.opt, a.rng, random_batch(data_a, 2, 16), sched, fp);
        ++a.iteration;
    }

    TrainState b = load_checkpoint(dir.file("mid.ckpt"));
    Rng data_b(7);
    for (int i = 0; i < 2; ++i) random_batch(data_b, 2, 16);  // burn the consumed draws
    for (int i = 0; i < 2; ++i) {
        train_step(b.models, b.opt, b.rng, random_batch(data_b, 2, 16), sched, fp);
        ++b.iteration;
    }

    CHECK(a.iteration == 4);
    CHECK(same_state_bits(a, b));
}

TEST_CASE("the recognizer section round trips and reproduces its outputs") {
    TempDir dir;
    TrainState st = init_train_state(tiny_cfg(), /*with_crnn=*/true);
    CHECK(st.has_crnn);
    Rng rng(3);
    Tensor<float> patch = rng.normal_tensor<float>({1, 1, 8, 12});
    Tensor<float> before = val(st.crnn.forward(constant(patch)));
    save_checkpoint(dir.file("c.ckpt"), st);

    TrainState back = load_checkpoint(dir.file("c.ckpt"));
    CHECK(back.has_crnn);
    const auto& ia = st.crnn_store.items();
    const auto& ib = back.crnn_store.items();
    REQUIRE(ia.size() == ib.size());
    for (std::size_t i = 0; i < ia.size(); ++i) {
        CHECK(ia[i].first == ib[i].first);
        CHECK(same_bits(ia[i].second->value, ib[i].second->value));
    }
    CHECK(same_bits(before, val(back.crnn.forward(constant(patch)))));
}

TEST_CASE("a checkpoint without a recognizer loads without one") {
    TempDir dir;
    save_checkpoint(dir.file("d.ckpt"), init_train_state(tiny_cfg(), false));
    TrainState back = load_checkpoint(dir.file("d.ckpt"));
    CHECK_FALSE(back.has_crnn);
    CHECK(back.crnn_store.items().empty());
}

TEST_CASE("malformed checkpoint files are rejected with a reason") {
    TempDir dir;
    CHECK(load_fails_with(dir.file("missing.ckpt"), "cannot open"));

    std::string path = dir.file("e.ckpt");
    save_checkpoint(path, init_train_state(tiny_cfg()));
    auto size = fs::file_size(path);

    std::string bad_magic = dir.file("bad_magic.ckpt");
    fs::copy_file(path, bad_magic);
    clobber_byte(bad_magic, 0, 'X');
    CHECK(load_fails_with(bad_magic, "not a checkpoint file"));

    std::string bad_version = dir.file("bad_version.ckpt");
    fs::copy_file(path, bad_version);
    clobber_byte(bad_version, 8, 9);  // version field follows the 8-byte magic
    CHECK(load_fails_with(bad_version, "unsupported format version"));

    std::string truncated = dir.file("truncated.ckpt");
    fs::copy_file(path, truncated);
    fs::resize_file(truncated, size / 2);
    CHECK(load_fails_with(truncated, "truncated"));

    std::string trailing = dir.file("trailing.ckpt");
    fs::copy_file(path, trailing);
    std::ofstream(trailing, std::ios::app | std::ios::binary) << 'x';
    CHECK(load_fails_with(trailing, "trailing bytes"));
}

TEST_CASE("the config snapshot rebuilds the same architecture") {
    TempDir dir;
    TrainConfig cfg = tiny_cfg();
    cfg.init_net.width = 6;  // non-default shape must come back from the snapshot
    cfg.den_net.enc_blocks = {2, 1};
    validate_train_config(cfg);
    TrainState st = init_train_state(cfg);
    save_checkpoint(dir.file("f.ckpt"), st);

    TrainState back = load_checkpoint(dir.file("f.ckpt"));
    CHECK(back.config.init_net.width == 6);
    CHECK(back.models.store.param_count() == st.models.store.param_count());
}
