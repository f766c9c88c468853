#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "docdpm/ocr.hpp"
#include "helpers.hpp"

using namespace docdpm;

namespace {

// Exhaustive reference: recursive edit distance, exponential but fine short.
int lev_recursive(const std::string& a, const std::string& b) {
    if (a.empty()) return static_cast<int>(b.size());
    if (b.empty()) return static_cast<int>(a.size());
    int keep = lev_recursive(a.substr(1), b.substr(1)) + (a[0] == b[0] ? 0 : 1);
    int del = 1 + lev_recursive(a.substr(1), b);
    int ins = 1 + lev_recursive(a, b.substr(1));
    return std::min({keep, del, ins});
}

// Exhaustive reference: enumerate every frame-level path, collapse it, and
// sum the probabilities of those mapping to the target.
double ctc_brute_force(const Tensor<double>& lp, const std::vector<int>& target) {
    int frames = lp.dim(0), classes = lp.dim(1);
    std::vector<int> path(static_cast<std::size_t>(frames), 0);
    double p = 0.0;
    while (true) {
        std::vector<int> collapsed;
        int prev = -1;
        for (int t = 0; t < frames; ++t) {
            int c = path[static_cast<std::size_t>(t)];
            if (c != prev && c != 0) collapsed.push_back(c);
            prev = c;
        }
        if (collapsed == target) {
            double lg = 0;
            for (int t = 0; t < frames; ++t)
                lg += lp[static_cast<std::int64_t>(t) * classes + path[static_cast<std::size_t>(t)]];
            p += std::exp(lg);
        }
        int d = 0;
        while (d < frames && ++path[static_cast<std::size_t>(d)] == classes) {
            path[static_cast<std::size_t>(d)] = 0;
            ++d;
        }
        if (d == frames) break;
    }
    return p;
}

Tensor<double> random_log_probs(Rng& rng, int frames, int classes) {
    Tensor<double> lp({frames, classes});
    for (int t = 0; t < frames; ++t) {
        double lse = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < classes; ++k) {
            double v = rng.normal() * 1.5;
            lp[static_cast<std::int64_t>(t) * classes + k] = v;
            lse = detail::log_add(lse, v);
        }
        for (int k = 0; k < classes; ++k) lp[static_cast<std::int64_t>(t) * classes + k] -= lse;
    }
    return lp;
}

std::string random_word(Rng& rng, const std::string& syms, int lo, int hi) {
    int len = static_cast<int>(rng.uniform_int(lo, hi));
    std::string s;
    for (int i = 0; i < len; ++i)
        s.push_back(syms[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(syms.size()) - 1))]);
    return s;
}

// Striped toy glyphs the recognizer can tell apart without real text rendering.
Tensor<float> toy_glyph(int cls, int height = 32, int width = 16) {
    Tensor<float> p({1, 1, height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            bool ink = cls == 1 ? (x / 4) % 2 == 0 : (y / 4) % 2 == 0;
            p.at4(0, 0, y, x) = ink ? -0.8f : 0.9f;
        }
    return p;
}

CrnnConfig mini_crnn_config() {
    CrnnConfig cfg;
    cfg.height = 8;
    cfg.c1 = 4;
    cfg.c2 = 6;
    cfg.hidden = 5;
    return cfg;
}

}  // namespace

TEST_CASE("alphabet encodes round trip and rejects unknown symbols") {
    auto a = default_alphabet();
    CHECK(a.classes() == static_cast<int>(a.symbols.size()) + 1);
    CHECK(a.index_of('a') == 1);
    CHECK(a.symbol(1) == 'a');
    std::string text = "hello, world 42!";
    CHECK(a.decode(a.encode(text)) == text);
    for (int k = 1; k < a.classes(); ++k) CHECK(a.index_of(a.symbol(k)) == k);
    CHECK_THROWS_AS(a.index_of('X'), std::invalid_argument);
    CHECK_THROWS_AS(a.encode("UPPER"), std::invalid_argument);
    CHECK_THROWS_AS(a.symbol(0), std::invalid_argument);
    CHECK_THROWS_AS(a.symbol(a.classes()), std::invalid_argument);
    CHECK(!a.contains('\n'));
}

TEST_CASE("levenshtein distance") {
    CHECK(levenshtein("", "abc") == 3);
    CHECK(levenshtein("same", "same") == 0);
    CHECK(levenshtein("kitten", "sitting") == 3);

    Rng rng(41);
    for (int i = 0; i < 60; ++i) {
        auto a = random_word(rng, "abc", 0, 5);
        auto b = random_word(rng, "abc", 0, 5);
        auto c = random_word(rng, "abc", 0, 5);
        CHECK(levenshtein(a, b) == lev_recursive(a, b));
        CHECK(levenshtein(a, b) == levenshtein(b, a));
        CHECK(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
    }
}

TEST_CASE("character error rate aggregates edits over reference length") {
    CHECK(cer({"abc", "def"}, {"abc", "def"}) == 0.0);

    std::string ref(100, 'a');
    std::string hyp = ref;
    hyp[10] = 'b';
    CHECK(cer({hyp}, {ref}) == doctest::Approx(1.0));

    std::vector<std::string> hyps{"hxllo", "wrld", "4"};
    std::vector<std::string> refs{"hello", "world", "42"};
    double expect = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        expect += levenshtein(hyps[i], refs[i]);
        total += refs[i].size();
    }
    CHECK(cer(hyps, refs) == doctest::Approx(100.0 * expect / static_cast<double>(total)));

    CHECK_THROWS_AS(cer({"a"}, {"a", "b"}), std::invalid_argument);
    CHECK_THROWS_AS(cer({""}, {""}), std::invalid_argument);
}

TEST_CASE("ctc loss on hand-enumerable cases") {
    // Uniform two-class frames: P(blank) = P(a) = 0.5.
    auto uniform = [](int frames) {
        Tensor<double> lp({frames, 2});
        lp.fill(std::log(0.5));
        return lp;
    };
    auto [l1, g1] = ctc_loss_value(uniform(1), {1});
    CHECK(l1 == doctest::Approx(-std::log(0.5)).epsilon(1e-12));
    CHECK(g1[1] == doctest::Approx(-1.0));  // the only path emits 'a'
    CHECK(g1[0] == doctest::Approx(0.0));

    auto [l2, g2] = ctc_loss_value(uniform(2), {1});
    CHECK(l2 == doctest::Approx(-std::log(0.75)).epsilon(1e-12));

    // Empty target: only the all-blank path contributes.
    Rng rng(7);
    auto lp = random_log_probs(rng, 4, 3);
    auto [l0, g0] = ctc_loss_value(lp, {});
    double expect = 0;
    for (int t = 0; t < 4; ++t) expect -= lp[static_cast<std::int64_t>(t) * 3];
    CHECK(l0 == doctest::Approx(expect).epsilon(1e-12));
    (void)g0;
}

TEST_CASE("ctc loss equals brute-force path enumeration") {
    Rng rng(99);
    int checked = 0;
    while (checked < 220) {
        int syms = static_cast<int>(rng.uniform_int(1, 3));
        int classes = syms + 1;
        int frames = static_cast<int>(rng.uniform_int(1, 6));
        std::vector<int> target;
        int len = static_cast<int>(rng.uniform_int(0, 3));
        for (int i = 0; i < len; ++i) target.push_back(static_cast<int>(rng.uniform_int(1, syms)));
        if (frames < detail::ctc_min_frames(target)) continue;

        auto lp = random_log_probs(rng, frames, classes);
        auto [loss, grad] = ctc_loss_value(lp, target);
        double brute = ctc_brute_force(lp, target);
        CHECK(loss == doctest::Approx(-std::log(brute)).epsilon(1e-8));
        (void)grad;
        ++checked;
    }
    CHECK(checked >= 200);
}

TEST_CASE("ctc analytic gradient matches finite differences") {
    Rng rng(123);
    for (int inst = 0; inst < 25; ++inst) {
        int syms = static_cast<int>(rng.uniform_int(1, 3));
        int classes = syms + 1;
        int frames = static_cast<int>(rng.uniform_int(2, 6));
        std::vector<int> target;
        int len = static_cast<int>(rng.uniform_int(1, 3));
        for (int i = 0; i < len; ++i) target.push_back(static_cast<int>(rng.uniform_int(1, syms)));
        if (frames < detail::ctc_min_frames(target)) continue;

        auto lp = random_log_probs(rng, frames, classes);
        auto [loss, grad] = ctc_loss_value(lp, target);
        (void)loss;
        const double eps = 1e-6;
        for (std::int64_t i = 0; i < lp.numel(); ++i) {
            auto plus = lp, minus = lp;
            plus[i] += eps;
            minus[i] -= eps;
            double fd = (ctc_loss_value(plus, target).first - ctc_loss_value(minus, target).first) /
                        (2 * eps);
            CHECK(std::abs(grad[i] - fd) <= 1e-5 * std::max({1.0, std::abs(grad[i]), std::abs(fd)}));
        }
    }
}

TEST_CASE("ctc loss absorbs per-frame score shifts") {
    Rng rng(17);
    Tensor<double> raw({4, 3});
    for (std::int64_t i = 0; i < raw.numel(); ++i) raw[i] = rng.normal();

    auto normalize = [](Tensor<double> t) {
        for (int r = 0; r < t.dim(0); ++r) {
            double lse = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < t.dim(1); ++k)
                lse = detail::log_add(lse, t[static_cast<std::int64_t>(r) * t.dim(1) + k]);
            for (int k = 0; k < t.dim(1); ++k)
                t[static_cast<std::int64_t>(r) * t.dim(1) + k] -= lse;
        }
        return t;
    };

    auto shifted = raw;
    for (int k = 0; k < 3; ++k) shifted[static_cast<std::int64_t>(2) * 3 + k] += 5.7;
    std::vector<int> target{1, 2};
    auto a = ctc_loss_value(normalize(raw), target).first;
    auto b = ctc_loss_value(normalize(shifted), target).first;
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("ctc loss rejects malformed inputs") {
    Tensor<double> lp({2, 3});
    lp.fill(std::log(1.0 / 3.0));
    CHECK_THROWS_AS(ctc_loss_value(lp, {3}), std::invalid_argument);   // symbol out of range
    CHECK_THROWS_AS(ctc_loss_value(lp, {0}), std::invalid_argument);   // blank as target
    CHECK_THROWS_AS(ctc_loss_value(lp, {1, 1, 2}), std::invalid_argument);  // needs 4 frames
    CHECK_THROWS_AS(ctc_loss_value(lp, {1, 1}), std::invalid_argument);     // needs 3 frames
    Tensor<double> unnorm({2, 3});
    unnorm.fill(0.0);
    CHECK_THROWS_AS(ctc_loss_value(unnorm, {1}), std::invalid_argument);
}

TEST_CASE("ctc autograd node backpropagates the analytic gradient") {
    Rng rng(5);
    auto lp = random_log_probs(rng, 5, 4);
    std::vector<int> target{2, 1, 3};
    auto [loss, grad] = ctc_loss_value(lp, target);

    auto v = parameter(lp);
    auto node = ctc_loss(v, target);
    CHECK(node->value[0] == doctest::Approx(loss).epsilon(1e-14));
    backward(node);
    for (std::int64_t i = 0; i < grad.numel(); ++i)
        CHECK(v->grad[i] == doctest::Approx(grad[i]).epsilon(1e-14));
}

TEST_CASE("greedy decode collapses repeats and drops blanks") {
    Alphabet ab;
    ab.symbols = "ab";
    auto one_hot = [&](const std::vector<int>& path) {
        Tensor<double> lp({static_cast<int>(path.size()), 3});
        lp.fill(std::log(1e-9));
        for (std::size_t t = 0; t < path.size(); ++t)
            lp[static_cast<std::int64_t>(t) * 3 + path[t]] = std::log(1.0 - 2e-9);
        return lp;
    };
    CHECK(ctc_greedy_decode(one_hot({1, 1, 0, 2}), ab) == "ab");
    CHECK(ctc_greedy_decode(one_hot({0, 0, 0}), ab) == "");
    CHECK(ctc_greedy_decode(one_hot({1, 0, 1}), ab) == "aa");
    CHECK(ctc_greedy_decode(one_hot({2, 2, 2, 1}), ab) == "ba");

    // One-hot alignment of a word with blanks between letters reads back.
    std::string s = "abba";
    std::vector<int> path;
    for (char c : s) {
        path.push_back(ab.index_of(c));
        path.push_back(0);
    }
    CHECK(ctc_greedy_decode(one_hot(path), ab) == s);

    // Independent collapse reference on random paths.
    Rng rng(31);
    for (int it = 0; it < 50; ++it) {
        std::vector<int> p;
        for (int t = 0; t < 8; ++t) p.push_back(static_cast<int>(rng.uniform_int(0, 2)));
        std::string expect;
        int prev = -1;
        for (int c : p) {
            if (c != prev && c != 0) expect.push_back(ab.symbol(c));
            prev = c;
        }
        CHECK(ctc_greedy_decode(one_hot(p), ab) == expect);
    }
}

TEST_CASE("crnn forward shape, normalization, and validation") {
    ParamStore<float> ps;
    Rng rng(2);
    CrnnConfig cfg;
    auto ab = default_alphabet();
    auto crnn = make_crnn(ps, rng, "crnn", cfg, ab.classes());

    CHECK(crnn.frames_for_width(128) == 32);

    Tensor<float> patch = rng.uniform_tensor<float>({1, 1, 32, 64}, -1.0, 1.0);
    auto out = crnn.forward(constant(patch));
    REQUIRE(out->value.ndim() == 2);
    CHECK(out->value.dim(0) == 16);
    CHECK(out->value.dim(1) == ab.classes());
    for (int t = 0; t < out->value.dim(0); ++t) {
        double sum = 0;
        for (int k = 0; k < ab.classes(); ++k)
            sum += std::exp(static_cast<double>(
                out->value[static_cast<std::int64_t>(t) * ab.classes() + k]));
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }

    auto out2 = crnn.forward(constant(patch));
    bool same = true;
    for (std::int64_t i = 0; i < out->value.numel(); ++i)
        same = same && (out->value[i] == out2->value[i]);
    CHECK(same);

    Tensor<float> wrong_h({1, 1, 16, 64});
    CHECK_THROWS_AS(crnn.forward(constant(wrong_h)), std::invalid_argument);
    Tensor<float> wrong_w({1, 1, 32, 30});
    CHECK_THROWS_AS(crnn.forward(constant(wrong_w)), std::invalid_argument);
}

TEST_CASE("crnn with ctc passes a full finite-difference gradient check") {
    ParamStore<double> ps;
    Rng rng(8);
    auto cfg = mini_crnn_config();
    auto crnn = make_crnn(ps, rng, "crnn", cfg, 3);
    Tensor<double> patch = rng.uniform_tensor<double>({1, 1, 8, 8}, -1.0, 1.0);
    std::vector<int> target{1, 2};

    std::vector<Var<double>> params;
    for (const auto& [name, p] : ps.items()) params.push_back(p);
    double worst = testutil::grad_check(
        params, [&] { return ctc_loss(crnn.forward(constant(patch)), target); }, 1e-5);
    CHECK(worst < 1e-3);
    CHECK(worst < 2e-4);  // in practice far tighter than the contract
}

TEST_CASE("word patches crop, rescale, and pad as specified") {
    Rng rng(12);
    CrnnConfig cfg;
    Tensor<float> img = rng.uniform_tensor<float>({1, 1, 48, 64}, -1.0, 1.0);

    SUBCASE("whole image box") {
        std::vector<WordBox> boxes{{"x", 0, 0, 64, 48}};
        auto out = extract_word_patches(constant(img), boxes, cfg);
        REQUIRE(out.size() == 1);
        CHECK(out[0]->value.dim(2) == 32);
        // 64 * 32/48 = 42.67 -> 43, padded to 44.
        CHECK(out[0]->value.dim(3) == 44);
    }

    SUBCASE("two disjoint boxes keep order and aspect") {
        std::vector<WordBox> boxes{{"a", 2, 4, 8, 16}, {"b", 30, 10, 32, 16}};
        auto out = extract_word_patches(constant(img), boxes, cfg);
        REQUIRE(out.size() == 2);
        CHECK(out[0]->value.dim(3) == 16);  // 8 * 32/16 = 16, already a multiple of 4
        CHECK(out[1]->value.dim(3) == 64);  // 32 * 32/16 = 64
    }

    SUBCASE("degenerate and out-of-range boxes throw") {
        CHECK_THROWS_AS(extract_word_patches(constant(img), {{"x", 0, 0, 0, 4}}, cfg),
                        std::invalid_argument);
        CHECK_THROWS_AS(extract_word_patches(constant(img), {{"x", 60, 40, 8, 10}}, cfg),
                        std::invalid_argument);
    }

    SUBCASE("pixel gradients flow only from inside boxes") {
        std::vector<WordBox> boxes{{"a", 8, 8, 16, 16}};
        auto src = parameter(img);
        auto out = extract_word_patches(src, boxes, cfg);
        backward(mean_all(mul(out[0], out[0])));
        double inside = 0, outside = 0;
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 64; ++x) {
                double g = std::abs(src->grad.at4(0, 0, y, x));
                bool in = x >= 8 && x < 24 && y >= 8 && y < 24;
                (in ? inside : outside) += g;
            }
        CHECK(inside > 0.0);
        CHECK(outside == 0.0);
    }
}

TEST_CASE("pretraining overfits toy glyphs and epochs=0 is a no-op") {
    Alphabet ab;
    ab.symbols = "ab";
    ParamStore<float> ps;
    Rng rng(77);
    CrnnConfig cfg;
    cfg.c1 = 8;
    cfg.c2 = 16;
    cfg.hidden = 16;
    auto crnn = make_crnn(ps, rng, "crnn", cfg, ab.classes());

    std::vector<std::pair<Tensor<float>, std::string>> data{
        {toy_glyph(1), "a"}, {toy_glyph(2), "b"}};

    SUBCASE("epochs=0 leaves parameters untouched") {
        std::vector<float> before;
        for (const auto& [name, p] : ps.items())
            before.insert(before.end(), p->value.vec().begin(), p->value.vec().end());
        Adam<float> opt;
        Rng trng(3);
        pretrain_crnn(crnn, ps, opt, data, 0, trng, ab);
        std::vector<float> after;
        for (const auto& [name, p] : ps.items())
            after.insert(after.end(), p->value.vec().begin(), p->value.vec().end());
        CHECK(before == after);
    }

    SUBCASE("overfit drives loss near zero and decodes exactly") {
        Adam<float> opt;
        opt.lr = 3e-3f;
        Rng trng(3);
        pretrain_crnn(crnn, ps, opt, data, 60, trng, ab);
        double total = 0;
        for (const auto& [patch, text] : data) {
            auto logits = crnn.forward(constant(patch));
            total += static_cast<double>(ctc_loss(logits, ab.encode(text))->value[0]);
            CHECK(ctc_greedy_decode(logits->value, ab) == text);
        }
        CHECK(total / 2.0 < 0.05);
    }

    SUBCASE("rejects bad datasets") {
        Adam<float> opt;
        Rng trng(3);
        std::vector<std::pair<Tensor<float>, std::string>> empty;
        CHECK_THROWS_AS(pretrain_crnn(crnn, ps, opt, empty, 1, trng, ab), std::invalid_argument);
        std::vector<std::pair<Tensor<float>, std::string>> bad{{toy_glyph(1), "zzz"}};
        CHECK_THROWS_AS(pretrain_crnn(crnn, ps, opt, bad, 1, trng, ab), std::invalid_argument);
    }
}

TEST_CASE("finetune_step mixes the recognizer penalty into training") {
    auto sched = make_linear_schedule(20, 1e-4, 0.02);
    auto fp = make_filter_pair();
    Alphabet ab;
    ab.symbols = "ab";

    ModelConfig mcfg;
    mcfg.init_net.width = 4;
    mcfg.init_net.enc_blocks = {1};
    mcfg.init_net.middle_blocks = 1;
    mcfg.init_net.dec_blocks = {1};
    mcfg.den_net = mcfg.init_net;
    mcfg.time.dim = 8;
    mcfg.time.mlp_hidden = 16;

    ParamStore<float> crnn_ps;
    Rng crnn_rng(4);
    CrnnConfig ccfg;
    ccfg.c1 = 4;
    ccfg.c2 = 8;
    ccfg.hidden = 8;
    auto crnn = make_crnn(crnn_ps, crnn_rng, "crnn", ccfg, ab.classes());
    freeze_params(crnn_ps);

    Rng data_rng(6);
    FinetuneBatch<float> batch;
    batch.gt = data_rng.uniform_tensor<float>({2, 1, 40, 40}, -1.0, 1.0);
    batch.degraded = data_rng.uniform_tensor<float>({2, 1, 40, 40}, -1.0, 1.0);
    batch.words = {{{"ab", 4, 4, 20, 12}}, {}};

    SUBCASE("runs, reports l_ctc, and leaves the recognizer bitwise frozen") {
        auto models = make_models<float>(mcfg, 50);
        Adam<float> opt;
        Rng rng(9);
        std::vector<float> crnn_before;
        for (const auto& [name, p] : crnn_ps.items())
            crnn_before.insert(crnn_before.end(), p->value.vec().begin(), p->value.vec().end());

        auto rep = finetune_step(models, crnn, opt, rng, batch, sched, fp, ab);
        CHECK(rep.l_ctc > 0.0);
        CHECK(std::isfinite(rep.l_total));
        CHECK(rep.l_total ==
              doctest::Approx(0.5 * rep.l_init + rep.l_denoiser + rep.l_ctc).epsilon(1e-6));

        std::vector<float> crnn_after;
        for (const auto& [name, p] : crnn_ps.items())
            crnn_after.insert(crnn_after.end(), p->value.vec().begin(), p->value.vec().end());
        CHECK(crnn_before == crnn_after);
    }

    SUBCASE("zero boxes reduces exactly to train_step") {
        auto m1 = make_models<float>(mcfg, 50);
        auto m2 = make_models<float>(mcfg, 50);
        Adam<float> o1, o2;
        Rng r1(9), r2(9);
        FinetuneBatch<float> empty_words = batch;
        empty_words.words = {{}, {}};
        auto rep_ft = finetune_step(m1, crnn, o1, r1, empty_words, sched, fp, ab);
        Batch<float> plain{batch.gt, batch.degraded};
        auto rep_tr = train_step(m2, o2, r2, plain, sched, fp);
        CHECK(rep_ft.l_ctc == 0.0);
        CHECK(rep_ft.l_total == doctest::Approx(rep_tr.l_total));
        auto& i1 = m1.store.items();
        auto& i2 = m2.store.items();
        bool same = true;
        for (std::size_t k = 0; k < i1.size(); ++k) {
            auto& v1 = i1[k].second->value.vec();
            auto& v2 = i2[k].second->value.vec();
            for (std::size_t j = 0; j < v1.size(); ++j) same = same && (v1[j] == v2[j]);
        }
        CHECK(same);
    }

    SUBCASE("missing word lists are an error") {
        auto models = make_models<float>(mcfg, 50);
        Adam<float> opt;
        Rng rng(9);
        FinetuneBatch<float> bad = batch;
        bad.words = {{}};
        CHECK_THROWS_AS(finetune_step(models, crnn, opt, rng, bad, sched, fp, ab),
                        std::invalid_argument);
    }
}
