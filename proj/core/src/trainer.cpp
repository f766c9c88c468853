#include "docdpm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "docdpm/dataset.hpp"
#include "docdpm/freq.hpp"
#include "docdpm/manifest.hpp"
#include "docdpm/png_io.hpp"
#include "docdpm/schedule.hpp"

namespace fs = std::filesystem;

namespace docdpm {

namespace {

std::string fmt(double v, int prec) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

std::string kind_text(SamplerSpec::Kind k) {
    return k == SamplerSpec::Kind::ddim ? "ddim" : "ode_solver";
}

std::string spacing_text(SamplerSpec::Spacing s) {
    return s == SamplerSpec::Spacing::uniform_t ? "uniform_t" : "uniform_lambda";
}

std::string ckpt_name(std::int64_t iteration) {
    std::ostringstream os;
    os << "ckpt_" << std::setw(7) << std::setfill('0') << iteration << ".ckpt";
    return os.str();
}

// Level-1 lines go to the console and, byte for byte, to the run's log file;
// the file carries no timestamps so identical runs write identical logs.
struct TeeLog {
    std::ofstream file;
    const RunLog* console = nullptr;

    TeeLog(const fs::path& path, bool append, const RunLog& log) : console(&log) {
        file.open(path, append ? std::ios::app : std::ios::trunc);
        if (!file.is_open())
            throw std::runtime_error("cannot open log file " + path.string());
    }
    void line(const std::string& s) {
        file << s << '\n';
        file.flush();
        console->info(s);
    }
};

Tensor<float> center_crop_sq(const Tensor<float>& img, int size) {
    int h = img.dim(2), w = img.dim(3);
    int y0 = (h - size) / 2, x0 = (w - size) / 2;
    Tensor<float> out({1, 1, size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) out.at4(0, 0, y, x) = img.at4(0, 0, y0 + y, x0 + x);
    return out;
}

// Name of the first key whose line differs between two canonical config texts.
std::string first_diff_key(const std::string& a, const std::string& b) {
    std::istringstream sa(a), sb(b);
    std::string la, lb;
    while (true) {
        bool ga = static_cast<bool>(std::getline(sa, la));
        bool gb = static_cast<bool>(std::getline(sb, lb));
        if (!ga && !gb) return "(none)";
        if (!ga || !gb || la != lb) {
            const std::string& l = ga ? la : lb;
            auto eq = l.find('=');
            std::string key = eq == std::string::npos ? l : l.substr(0, eq);
            while (!key.empty() && key.back() == ' ') key.pop_back();
            return key;
        }
    }
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end(),
              [](const fs::path& x, const fs::path& y) { return x.filename() < y.filename(); });
    return out;
}

Tensor<float> pack_chunk(const std::vector<PatchRecord>& recs, std::size_t lo, std::size_t hi) {
    int p = recs[lo].patch.dim(2);
    Tensor<float> out({static_cast<int>(hi - lo), 1, p, p});
    float* dst = out.data();
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& t = recs[i].patch;
        std::copy(t.data(), t.data() + t.numel(), dst);
        dst += t.numel();
    }
    return out;
}

void unpack_chunk(const Tensor<float>& chunk, std::vector<PatchRecord>& recs, std::size_t lo) {
    int p = chunk.dim(2);
    const float* src = chunk.data();
    for (int i = 0; i < chunk.dim(0); ++i) {
        Tensor<float> t({1, 1, p, p});
        std::copy(src, src + t.numel(), t.data());
        src += t.numel();
        recs[lo + static_cast<std::size_t>(i)].patch = std::move(t);
    }
}

// Mean PSNR of sampler output over center patches of the validation images.
// Seeds depend only on (seed, iteration, image index), never on the training
// rng, so scoring does not perturb the training stream.
double val_patch_psnr(const TrainState& state, const Dataset& ds, const NoiseSchedule& sched,
                      int* used) {
    const TrainConfig& c = state.config;
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < ds.val_indices.size() && n < c.val_images; ++i) {
        const auto& rec = ds.records[static_cast<std::size_t>(ds.val_indices[i])];
        const auto& deg = ds.image(rec.degraded_path);
        if (deg.dim(2) < c.patch || deg.dim(3) < c.patch) continue;
        const auto& gt = ds.image(rec.clean_path);
        std::uint64_t seed = c.seed + static_cast<std::uint64_t>(state.iteration) * 1000003ull +
                             static_cast<std::uint64_t>(i);
        Tensor<float> restored =
            restore(center_crop_sq(deg, c.patch), state.models, sched, c.sampler, seed);
        sum += psnr(restored, center_crop_sq(gt, c.patch), 2.0);
        ++n;
    }
    *used = n;
    return n > 0 ? sum / n : 0.0;
}

void require_patch_fits(const Dataset& ds, int patch) {
    for (int idx : ds.train_indices) {
        const auto& rec = ds.records[static_cast<std::size_t>(idx)];
        auto [h, w] = read_png_size(rec.degraded_path);
        if (h < patch || w < patch)
            throw ConfigError("train: " + rec.degraded_path + " is " + std::to_string(h) + "x" +
                              std::to_string(w) + ", smaller than train.patch=" +
                              std::to_string(patch));
    }
}

std::string step_line(std::int64_t it, const LossReport& rep, bool with_ctc) {
    std::string s = "step=" + std::to_string(it) + " l_total=" + fmt(rep.l_total, 6) +
                    " l_init=" + fmt(rep.l_init, 6) + " l_denoiser=" + fmt(rep.l_denoiser, 6);
    if (with_ctc) s += " l_ctc=" + fmt(rep.l_ctc, 6);
    return s;
}

void save_cadence_checkpoint(const TrainState& state, const fs::path& out, TeeLog& tee) {
    std::string name = ckpt_name(state.iteration);
    save_checkpoint((out / name).string(), state);
    save_checkpoint((out / "latest.ckpt").string(), state);
    tee.line("checkpoint: " + name);
}

void maybe_log_val(const TrainState& state, const Dataset& ds, const NoiseSchedule& sched,
                   TeeLog& tee) {
    if (state.config.val_images <= 0) return;
    int used = 0;
    double v = val_patch_psnr(state, ds, sched, &used);
    if (used > 0)
        tee.line("val step=" + std::to_string(state.iteration) +
                 " images=" + std::to_string(used) + " psnr_db=" + fmt(v, 2));
}

}  // namespace

std::string describe_text(const TrainConfig& cfg) {
    validate_train_config(cfg);
    auto models = make_models<float>({cfg.init_net, cfg.den_net, cfg.time}, cfg.seed);
    ParamStore<float> crnn_store;
    Rng crnn_rng = Rng(cfg.seed).fork(2);
    make_crnn(crnn_store, crnn_rng, "crnn", cfg.crnn, default_alphabet().classes());

    std::ostringstream os;
    os << "docdpm " << kVersion << "\n";
    os << "schedule: steps=" << cfg.schedule_steps << " beta_start=" << cfg.beta_start
       << " beta_end=" << cfg.beta_end << "\n";
    os << "initial predictor: params=" << models.store.param_count("init")
       << " width=" << cfg.init_net.width << "\n";
    os << "denoiser: params=" << models.store.param_count("den") << " width=" << cfg.den_net.width
       << " time_dim=" << cfg.time.dim << "\n";
    os << "recognizer: params=" << crnn_store.param_count() << " height=" << cfg.crnn.height
       << " classes=" << default_alphabet().classes() << "\n";
    os << "total params: " << models.store.param_count() + crnn_store.param_count() << "\n";
    os << "sampler: kind=" << kind_text(cfg.sampler.kind) << " steps=" << cfg.sampler.steps
       << " order=" << cfg.sampler.order << " spacing=" << spacing_text(cfg.sampler.spacing)
       << "\n";
    os << "train: steps=" << cfg.train_steps << " batch=" << cfg.batch << " patch=" << cfg.patch
       << " lr=" << cfg.lr << "\n";
    return os.str();
}

TrainState run_train(const TrainConfig& cfg, const RunLog& log, const std::string& resume_path) {
    validate_train_config(cfg);
    if (cfg.data_manifest.empty()) throw ConfigError("train: data.manifest is required");
    if (cfg.out_dir.empty()) throw ConfigError("train: out.dir is required");

    TrainState state;
    bool resuming = !resume_path.empty();
    if (!resuming) {
        state = init_train_state(cfg);
    } else {
        state = load_checkpoint(resume_path);
        TrainConfig merged = state.config;
        merged.data_manifest = cfg.data_manifest;
        merged.out_dir = cfg.out_dir;
        merged.train_steps = cfg.train_steps;
        merged.log_every = cfg.log_every;
        merged.checkpoint_every = cfg.checkpoint_every;
        merged.val_images = cfg.val_images;
        merged.sampler = cfg.sampler;
        if (merged.to_text() != cfg.to_text())
            throw ConfigError("resume: " + first_diff_key(merged.to_text(), cfg.to_text()) +
                              " differs from the checkpoint config; only data.manifest, out.dir, "
                              "train.steps, train.log_every, train.checkpoint_every, "
                              "train.val_images and sampler.* may change on resume");
        state.config = cfg;
    }
    const TrainConfig& c = state.config;

    Dataset ds = load_dataset(c.data_manifest);
    require_patch_fits(ds, c.patch);
    fs::create_directories(c.out_dir);
    TeeLog tee(fs::path(c.out_dir) / "train_log.txt", resuming, log);

    NoiseSchedule sched = make_linear_schedule(c.schedule_steps, c.beta_start, c.beta_end);
    FilterPair fp = make_filter_pair();
    TrainOptions topts{c.detach_initial};

    tee.line("train: start iteration=" + std::to_string(state.iteration) +
             " target=" + std::to_string(c.train_steps) +
             " train_images=" + std::to_string(ds.train_indices.size()) +
             " val_images=" + std::to_string(ds.val_indices.size()));
    log.debug("train: init_params=" + std::to_string(state.models.store.param_count("init")) +
              " den_params=" + std::to_string(state.models.store.param_count("den")));

    for (std::int64_t it = state.iteration; it < c.train_steps;) {
        Batch<float> batch = sample_batch(ds, state.rng, c.batch, c.patch, c.augment);
        LossReport rep = train_step(state.models, state.opt, state.rng, batch, sched, fp, topts);
        state.iteration = ++it;
        if (it % c.log_every == 0 || it == c.train_steps)
            tee.line(step_line(it, rep, false));
        if (it % c.checkpoint_every == 0 || it == c.train_steps) {
            save_cadence_checkpoint(state, c.out_dir, tee);
            maybe_log_val(state, ds, sched, tee);
        }
    }
    if (state.iteration >= c.train_steps && resuming)
        tee.line("train: done at iteration " + std::to_string(state.iteration));
    return state;
}

TrainState run_finetune(const FinetuneOptions& opts, const RunLog& log) {
    if (opts.checkpoint.empty()) throw ConfigError("finetune: a checkpoint is required");
    TrainState state = load_checkpoint(opts.checkpoint);
    for (const auto& a : opts.overrides) apply_override(state.config, a);
    const TrainConfig& c = state.config;
    if (c.data_manifest.empty()) throw ConfigError("finetune: data.manifest is required");
    if (c.out_dir.empty()) throw ConfigError("finetune: out.dir is required");

    if (!opts.crnn_checkpoint.empty()) {
        TrainState crnn_src = load_checkpoint(opts.crnn_checkpoint);
        if (!crnn_src.has_crnn)
            throw ConfigError("finetune: " + opts.crnn_checkpoint + " carries no recognizer");
        state.crnn_store = std::move(crnn_src.crnn_store);
        state.crnn = std::move(crnn_src.crnn);
        state.config.crnn = crnn_src.config.crnn;
        state.has_crnn = true;
    }
    if (!state.has_crnn)
        throw ConfigError(
            "finetune: no recognizer available; pass one trained with pretrain-ocr");
    freeze_params(state.crnn_store);
    state.opt.lr = c.finetune_lr;

    Dataset ds = load_dataset(c.data_manifest);
    require_patch_fits(ds, c.patch);
    fs::create_directories(c.out_dir);
    TeeLog tee(fs::path(c.out_dir) / "finetune_log.txt", false, log);

    NoiseSchedule sched = make_linear_schedule(c.schedule_steps, c.beta_start, c.beta_end);
    FilterPair fp = make_filter_pair();
    TrainOptions topts{c.detach_initial};
    Alphabet alphabet = default_alphabet();

    std::int64_t target = state.iteration + c.finetune_steps;
    tee.line("finetune: start iteration=" + std::to_string(state.iteration) +
             " target=" + std::to_string(target) + " lr=" + fmt(c.finetune_lr, 6));

    for (std::int64_t it = state.iteration; it < target;) {
        FinetuneBatch<float> batch = sample_finetune_batch(ds, state.rng, c.batch, c.patch);
        LossReport rep = finetune_step(state.models, state.crnn, state.opt, state.rng, batch,
                                       sched, fp, alphabet, topts);
        state.iteration = ++it;
        if ((it - (target - c.finetune_steps)) % c.log_every == 0 || it == target)
            tee.line(step_line(it, rep, true));
        if (it % c.checkpoint_every == 0 || it == target) save_cadence_checkpoint(state, c.out_dir, tee);
    }
    return state;
}

int run_sample(const SampleOptions& opts, const RunLog& log) {
    if (opts.checkpoint.empty()) throw ConfigError("sample: a checkpoint is required");
    if (opts.input.empty()) throw ConfigError("sample: an input directory or manifest is required");
    if (opts.out_dir.empty()) throw ConfigError("sample: an output directory is required");

    TrainState state = load_checkpoint(opts.checkpoint);
    for (const auto& a : opts.overrides) apply_override(state.config, a);
    const TrainConfig& c = state.config;
    int overlap = opts.overlap >= 0 ? opts.overlap : c.patch / 4;
    if (overlap >= c.patch)
        throw ConfigError("sample: overlap must be smaller than the patch size " +
                          std::to_string(c.patch));

    std::vector<std::string> inputs;
    if (fs::is_directory(opts.input)) {
        for (const auto& p : list_pngs(opts.input)) inputs.push_back(p.string());
    } else if (fs::is_regular_file(opts.input)) {
        for (const auto& rec : load_manifest(opts.input)) inputs.push_back(rec.degraded_path);
    } else {
        throw ConfigError("sample: input " + opts.input + " does not exist");
    }
    if (inputs.empty()) throw ConfigError("sample: no input images under " + opts.input);

    std::set<std::string> names;
    for (const auto& p : inputs) {
        std::string name = fs::path(p).filename().string();
        if (!names.insert(name).second)
            throw ConfigError("sample: duplicate input name " + name);
    }

    fs::create_directories(opts.out_dir);
    TeeLog tee(fs::path(opts.out_dir) / "sample_log.txt", false, log);
    tee.line("sample: kind=" + kind_text(c.sampler.kind) +
             " steps=" + std::to_string(c.sampler.steps) +
             " order=" + std::to_string(c.sampler.order) +
             " spacing=" + spacing_text(c.sampler.spacing) + " patch=" + std::to_string(c.patch) +
             " overlap=" + std::to_string(overlap) + " seed=" + std::to_string(opts.seed));

    NoiseSchedule sched = make_linear_schedule(c.schedule_steps, c.beta_start, c.beta_end);
    std::uint64_t chunk_counter = 0;
    for (const auto& path : inputs) {
        Tensor<float> img = read_png_gray(path);
        std::vector<PatchRecord> patches = extract_patches(img, c.patch, overlap);
        std::size_t chunks = 0;
        for (std::size_t lo = 0; lo < patches.size(); lo += static_cast<std::size_t>(c.batch)) {
            std::size_t hi = std::min(patches.size(), lo + static_cast<std::size_t>(c.batch));
            Tensor<float> out = restore(pack_chunk(patches, lo, hi), state.models, sched,
                                        c.sampler, opts.seed + chunk_counter);
            unpack_chunk(out, patches, lo);
            ++chunk_counter;
            ++chunks;
        }
        Tensor<float> stitched = stitch_patches(patches, img.dim(2), img.dim(3));
        std::string name = fs::path(path).filename().string();
        write_png_gray((fs::path(opts.out_dir) / name).string(), stitched);
        tee.line(name + " patches=" + std::to_string(patches.size()) +
                 " chunks=" + std::to_string(chunks));
    }
    return static_cast<int>(inputs.size());
}

EvalReport run_eval(const EvalOptions& opts, const RunLog& log) {
    if (opts.manifest.empty()) throw ConfigError("eval: a manifest is required");
    if (opts.outputs_dir.empty()) throw ConfigError("eval: an outputs directory is required");

    std::vector<ManifestRecord> records = load_manifest(opts.manifest);
    std::vector<Tensor<float>> restored;
    restored.reserve(records.size());
    for (const auto& rec : records) {
        fs::path p = fs::path(opts.outputs_dir) / fs::path(rec.degraded_path).filename();
        if (!fs::is_regular_file(p))
            throw ConfigError("eval: missing restored image " + p.string());
        restored.push_back(read_png_gray(p.string()));
    }

    TrainState state;
    Recognizer recognize;
    if (!opts.checkpoint.empty()) {
        state = load_checkpoint(opts.checkpoint);
        if (!state.has_crnn)
            throw ConfigError("eval: " + opts.checkpoint + " carries no recognizer");
        recognize = [&state](const Tensor<float>& image, const WordBox& box) {
            auto patches = extract_word_patches(constant(image), {box}, state.config.crnn);
            return ctc_greedy_decode(val(state.crnn.forward(patches[0])), default_alphabet());
        };
    }

    EvalReport rep = evaluate(records, restored, opts.mode, recognize);
    std::string report_path = opts.report_path.empty()
                                  ? (fs::path(opts.outputs_dir) / "eval_report.txt").string()
                                  : opts.report_path;
    std::ofstream out(report_path, std::ios::trunc);
    if (!out.is_open()) throw std::runtime_error("cannot write " + report_path);
    out << rep.to_text();
    out.close();
    log.debug("eval: wrote " + report_path);
    return rep;
}

namespace {

// Fills a page with random lowercase/digit words, sized so the renderer's
// overflow checks can never fire.
std::vector<std::string> synth_lines(Rng& rng, int width, int height, int scale) {
    int cols = width / scale, rows = height / scale;
    if (cols < 21 || rows < 11)
        throw ConfigError("degrade: page too small to synthesize text onto");
    int max_chars = (cols - 9) / 6 + 1;  // char i needs units 6i+7 <= cols-2
    int max_lines = (rows - 11) / 10 + 1;
    static const std::string pool = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::vector<std::string> lines;
    for (int li = 0; li < max_lines; ++li) {
        std::string line;
        for (;;) {
            int wl = static_cast<int>(rng.uniform_int(2, 6));
            int need = (line.empty() ? 0 : 1) + wl;
            if (static_cast<int>(line.size()) + need > max_chars) break;
            if (!line.empty()) line += ' ';
            for (int k = 0; k < wl; ++k)
                line += pool[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        }
        lines.push_back(line);
    }
    return lines;
}

std::string page_name(int i) {
    std::ostringstream os;
    os << "page_" << std::setw(4) << std::setfill('0') << i << ".png";
    return os.str();
}

}  // namespace

int run_degrade(const DegradeOptions& opts, const RunLog& log) {
    if (opts.out_dir.empty()) throw ConfigError("degrade: an output directory is required");
    try {
        validate_degrade_spec(opts.spec);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("degrade: ") + e.what());
    }
    fs::path out(opts.out_dir);
    fs::create_directories(out / "clean");
    fs::create_directories(out / "degraded");

    std::vector<ManifestRecord> records;
    auto add_pair = [&](const std::string& name, const Tensor<float>& clean,
                        const std::vector<WordBox>& words, int index) {
        DegradeSpec spec = opts.spec;
        spec.seed = opts.seed + static_cast<std::uint64_t>(index);
        Tensor<float> deg = degrade(clean, spec);
        write_png_gray((out / "clean" / name).string(), clean);
        write_png_gray((out / "degraded" / name).string(), deg);
        ManifestRecord rec;
        rec.clean_path = "clean/" + name;
        rec.degraded_path = "degraded/" + name;
        rec.words = words;
        records.push_back(std::move(rec));
    };

    if (!opts.clean_dir.empty()) {
        if (!fs::is_directory(opts.clean_dir))
            throw ConfigError("degrade: " + opts.clean_dir + " is not a directory");
        auto pngs = list_pngs(opts.clean_dir);
        if (pngs.empty()) throw ConfigError("degrade: no PNG images under " + opts.clean_dir);
        int i = 0;
        for (const auto& p : pngs) add_pair(p.filename().string(), read_png_gray(p.string()), {}, i++);
    } else {
        if (opts.count < 1) throw ConfigError("degrade: page count must be positive");
        Rng rng(opts.seed);
        for (int i = 0; i < opts.count; ++i) {
            RenderResult page = render_text_image(
                synth_lines(rng, opts.page_width, opts.page_height, opts.scale), opts.page_width,
                opts.page_height, opts.scale);
            add_pair(page_name(i), page.image, page.words, i);
        }
    }
    save_manifest((out / "manifest.jsonl").string(), records);
    log.info("degrade: wrote " + std::to_string(records.size()) + " pairs under " +
             opts.out_dir);
    return static_cast<int>(records.size());
}

double run_pretrain_ocr(const TrainConfig& cfg, const std::string& out_path, const RunLog& log) {
    validate_train_config(cfg);
    if (cfg.data_manifest.empty()) throw ConfigError("pretrain-ocr: data.manifest is required");
    if (out_path.empty()) throw ConfigError("pretrain-ocr: an output checkpoint path is required");

    Dataset ds = load_dataset(cfg.data_manifest);
    Alphabet alphabet = default_alphabet();
    std::vector<std::pair<Tensor<float>, std::string>> words;
    for (int idx : ds.train_indices) {
        const auto& rec = ds.records[static_cast<std::size_t>(idx)];
        if (rec.words.empty()) continue;
        auto patches = extract_word_patches(constant(ds.image(rec.clean_path)), rec.words,
                                            cfg.crnn);
        for (std::size_t k = 0; k < patches.size(); ++k)
            words.emplace_back(patches[k]->value, rec.words[k].text);
    }
    if (words.empty())
        throw ConfigError("pretrain-ocr: the training split carries no labeled words");

    TrainState state = init_train_state(cfg, /*with_crnn=*/true);
    Adam<float> opt;
    opt.lr = cfg.pretrain_lr;
    opt.clip_norm = cfg.clip_norm;
    Rng rng = Rng(cfg.seed).fork(3);
    log.info("pretrain-ocr: words=" + std::to_string(words.size()) +
             " epochs=" + std::to_string(cfg.pretrain_epochs));
    pretrain_crnn(state.crnn, state.crnn_store, opt, words, cfg.pretrain_epochs, rng, alphabet);

    std::vector<std::string> hyps, refs;
    for (const auto& [patch, text] : words) {
        hyps.push_back(ctc_greedy_decode(val(state.crnn.forward(constant(patch))), alphabet));
        refs.push_back(text);
    }
    double c = cer(hyps, refs);
    save_checkpoint(out_path, state);
    log.info("pretrain-ocr: cer=" + fmt(c, 2) + " saved " + out_path);
    return c;
}

}  // namespace docdpm
