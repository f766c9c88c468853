#include "docdpm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "docdpm/nafnet.hpp"

namespace docdpm {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& detail) {
    throw ConfigError("config: key '" + key + "': " + detail);
}

std::int64_t parse_int(const std::string& key, const std::string& v, std::int64_t lo,
                       std::int64_t hi) {
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        bad_value(key, "'" + v + "' is not an integer");
    if (out < lo || out > hi)
        bad_value(key, "value " + v + " outside [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "]");
    return out;
}

double parse_real(const std::string& key, const std::string& v, double lo, double hi,
                  bool lo_open = false, bool hi_open = false) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        bad_value(key, "'" + v + "' is not a number");
    }
    if (used != v.size() || !std::isfinite(out)) bad_value(key, "'" + v + "' is not a number");
    bool below = lo_open ? out <= lo : out < lo;
    bool above = hi_open ? out >= hi : out > hi;
    if (below || above) {
        std::ostringstream os;
        os << "value " << v << " outside " << (lo_open ? "(" : "[") << lo << ", " << hi
           << (hi_open ? ")" : "]");
        bad_value(key, os.str());
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad_value(key, "'" + v + "' is not a bool (use true or false)");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v, int lo, int hi,
                                std::size_t max_len) {
    std::vector<int> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        out.push_back(static_cast<int>(parse_int(key, item, lo, hi)));
    }
    if (out.empty() || out.size() > max_len)
        bad_value(key, "needs 1 to " + std::to_string(max_len) + " comma-separated entries");
    return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& schema() {
    static const std::map<std::string, Setter> s = {
        {"seed",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.seed = static_cast<std::uint64_t>(
                 parse_int(k, v, 0, std::numeric_limits<std::int64_t>::max()));
         }},
        {"data.manifest",
         [](TrainConfig& c, const std::string&, const std::string& v) { c.data_manifest = v; }},
        {"out.dir",
         [](TrainConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
        {"schedule.steps",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.schedule_steps = static_cast<int>(parse_int(k, v, 1, 1000));
         }},
        {"schedule.beta_start",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.beta_start = parse_real(k, v, 0.0, 1.0, true, true);
         }},
        {"schedule.beta_end",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.beta_end = parse_real(k, v, 0.0, 1.0, true, true);
         }},
        {"init.width",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.init_net.width = static_cast<int>(parse_int(k, v, 1, 512));
         }},
        {"init.enc_blocks",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.init_net.enc_blocks = parse_int_list(k, v, 0, 8, 4);
         }},
        {"init.middle_blocks",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.init_net.middle_blocks = static_cast<int>(parse_int(k, v, 0, 8));
         }},
        {"init.dec_blocks",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.init_net.dec_blocks = parse_int_list(k, v, 0, 8, 4);
         }},
        {"init.expansion",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.init_net.expansion = static_cast<int>(parse_int(k, v, 1, 8));
         }},
        {"den.width",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.den_net.width = static_cast<int>(parse_int(k, v, 1, 512));
         }},
        {"den.enc_blocks",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.den_net.enc_blocks = parse_int_list(k, v, 0, 8, 4);
         }},
        {"den.middle_blocks",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.den_net.middle_blocks = static_cast<int>(parse_int(k, v, 0, 8));
         }},
        {"den.dec_blocks",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.den_net.dec_blocks = parse_int_list(k, v, 0, 8, 4);
         }},
        {"den.expansion",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.den_net.expansion = static_cast<int>(parse_int(k, v, 1, 8));
         }},
        {"time.dim",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.time.dim = static_cast<int>(parse_int(k, v, 2, 256));
             if (c.time.dim % 2 != 0) bad_value(k, "must be even (sin/cos pairs)");
         }},
        {"time.mlp_hidden",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.time.mlp_hidden = static_cast<int>(parse_int(k, v, 1, 1024));
         }},
        {"optim.lr",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.lr = parse_real(k, v, 0.0, 1.0, true, false);
         }},
        {"optim.beta1",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.beta1 = parse_real(k, v, 0.0, 1.0, false, true);
         }},
        {"optim.beta2",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.beta2 = parse_real(k, v, 0.0, 1.0, false, true);
         }},
        {"optim.clip_norm",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.clip_norm = parse_real(k, v, -1e6, 1e6);
         }},
        {"train.steps",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.train_steps = static_cast<int>(parse_int(k, v, 1, 10000000));
         }},
        {"train.batch",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.batch = static_cast<int>(parse_int(k, v, 1, 256));
         }},
        {"train.patch",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.patch = static_cast<int>(parse_int(k, v, 8, 512));
         }},
        {"train.augment",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.augment = parse_bool(k, v);
         }},
        {"train.detach_initial",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.detach_initial = parse_bool(k, v);
         }},
        {"train.log_every",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.log_every = static_cast<int>(parse_int(k, v, 1, 10000000));
         }},
        {"train.checkpoint_every",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.checkpoint_every = static_cast<int>(parse_int(k, v, 1, 10000000));
         }},
        {"train.val_images",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.val_images = static_cast<int>(parse_int(k, v, 0, 64));
         }},
        {"sampler.kind",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             if (v == "ddim") c.sampler.kind = SamplerSpec::Kind::ddim;
             else if (v == "ode_solver") c.sampler.kind = SamplerSpec::Kind::ode_solver;
             else bad_value(k, "'" + v + "' is not one of ddim, ode_solver");
         }},
        {"sampler.steps",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.sampler.steps = static_cast<int>(parse_int(k, v, 1, 1000));
         }},
        {"sampler.order",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.sampler.order = static_cast<int>(parse_int(k, v, 1, 2));
         }},
        {"sampler.spacing",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             if (v == "uniform_t") c.sampler.spacing = SamplerSpec::Spacing::uniform_t;
             else if (v == "uniform_lambda")
                 c.sampler.spacing = SamplerSpec::Spacing::uniform_lambda;
             else bad_value(k, "'" + v + "' is not one of uniform_t, uniform_lambda");
         }},
        {"crnn.height",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.crnn.height = static_cast<int>(parse_int(k, v, 8, 128));
         }},
        {"crnn.c1",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.crnn.c1 = static_cast<int>(parse_int(k, v, 1, 256));
         }},
        {"crnn.c2",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.crnn.c2 = static_cast<int>(parse_int(k, v, 1, 256));
         }},
        {"crnn.hidden",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.crnn.hidden = static_cast<int>(parse_int(k, v, 1, 512));
         }},
        {"finetune.steps",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.finetune_steps = static_cast<int>(parse_int(k, v, 1, 10000000));
         }},
        {"finetune.lr",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.finetune_lr = parse_real(k, v, 0.0, 1.0, true, false);
         }},
        {"pretrain.epochs",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.pretrain_epochs = static_cast<int>(parse_int(k, v, 1, 100000));
         }},
        {"pretrain.lr",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.pretrain_lr = parse_real(k, v, 0.0, 1.0, true, false);
         }},
    };
    return s;
}

void apply_assignment(TrainConfig& cfg, const std::string& key, const std::string& value) {
    auto it = schema().find(key);
    if (it == schema().end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(cfg, key, value);
}

std::string join(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::string real_text(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.beta_end < cfg.beta_start)
        throw ConfigError("config: key 'schedule.beta_end': must be >= schedule.beta_start");
    try {
        validate_network_config(cfg.init_net);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: init.* network: ") + e.what());
    }
    try {
        validate_network_config(cfg.den_net);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: den.* network: ") + e.what());
    }
    try {
        validate_sampler_spec(cfg.sampler, cfg.schedule_steps);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: sampler.*: ") + e.what());
    }
    try {
        validate_crnn_config(cfg.crnn);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: crnn.*: ") + e.what());
    }
    int init_factor = 1 << cfg.init_net.enc_blocks.size();
    int den_factor = 1 << cfg.den_net.enc_blocks.size();
    int factor = std::max(init_factor, den_factor);
    if (cfg.patch % factor != 0)
        throw ConfigError("config: key 'train.patch': must be a multiple of " +
                          std::to_string(factor) + " (network downsampling factor)");
    if (cfg.patch < factor * 2)
        throw ConfigError("config: key 'train.patch': too small for the network depth");
}

TrainConfig parse_train_config(const std::string& text, const std::string& source) {
    TrainConfig cfg;
    std::set<std::string> seen;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + source + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config: " + source + ":" + std::to_string(lineno) +
                              ": empty key");
        if (!seen.insert(key).second)
            throw ConfigError("config: " + source + ":" + std::to_string(lineno) +
                              ": duplicate key '" + key + "'");
        apply_assignment(cfg, key, value);
    }
    validate_train_config(cfg);
    return cfg;
}

TrainConfig load_train_config(const std::string& path,
                              const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    TrainConfig cfg = parse_train_config(buf.str(), path);
    for (const auto& o : overrides) apply_override(cfg, o);
    return cfg;
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config: override '" + assignment + "' must be key=value");
    std::string key = trim(assignment.substr(0, eq));
    std::string value = trim(assignment.substr(eq + 1));
    apply_assignment(cfg, key, value);
    validate_train_config(cfg);
}

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os << "seed = " << seed << "\n";
    os << "data.manifest = " << data_manifest << "\n";
    os << "out.dir = " << out_dir << "\n";
    os << "schedule.steps = " << schedule_steps << "\n";
    os << "schedule.beta_start = " << real_text(beta_start) << "\n";
    os << "schedule.beta_end = " << real_text(beta_end) << "\n";
    os << "init.width = " << init_net.width << "\n";
    os << "init.enc_blocks = " << join(init_net.enc_blocks) << "\n";
    os << "init.middle_blocks = " << init_net.middle_blocks << "\n";
    os << "init.dec_blocks = " << join(init_net.dec_blocks) << "\n";
    os << "init.expansion = " << init_net.expansion << "\n";
    os << "den.width = " << den_net.width << "\n";
    os << "den.enc_blocks = " << join(den_net.enc_blocks) << "\n";
    os << "den.middle_blocks = " << den_net.middle_blocks << "\n";
    os << "den.dec_blocks = " << join(den_net.dec_blocks) << "\n";
    os << "den.expansion = " << den_net.expansion << "\n";
    os << "time.dim = " << time.dim << "\n";
    os << "time.mlp_hidden = " << time.mlp_hidden << "\n";
    os << "optim.lr = " << real_text(lr) << "\n";
    os << "optim.beta1 = " << real_text(beta1) << "\n";
    os << "optim.beta2 = " << real_text(beta2) << "\n";
    os << "optim.clip_norm = " << real_text(clip_norm) << "\n";
    os << "train.steps = " << train_steps << "\n";
    os << "train.batch = " << batch << "\n";
    os << "train.patch = " << patch << "\n";
    os << "train.augment = " << (augment ? "true" : "false") << "\n";
    os << "train.detach_initial = " << (detach_initial ? "true" : "false") << "\n";
    os << "train.log_every = " << log_every << "\n";
    os << "train.checkpoint_every = " << checkpoint_every << "\n";
    os << "train.val_images = " << val_images << "\n";
    os << "sampler.kind = "
       << (sampler.kind == SamplerSpec::Kind::ddim ? "ddim" : "ode_solver") << "\n";
    os << "sampler.steps = " << sampler.steps << "\n";
    os << "sampler.order = " << sampler.order << "\n";
    os << "sampler.spacing = "
       << (sampler.spacing == SamplerSpec::Spacing::uniform_t ? "uniform_t" : "uniform_lambda")
       << "\n";
    os << "crnn.height = " << crnn.height << "\n";
    os << "crnn.c1 = " << crnn.c1 << "\n";
    os << "crnn.c2 = " << crnn.c2 << "\n";
    os << "crnn.hidden = " << crnn.hidden << "\n";
    os << "finetune.steps = " << finetune_steps << "\n";
    os << "finetune.lr = " << real_text(finetune_lr) << "\n";
    os << "pretrain.epochs = " << pretrain_epochs << "\n";
    os << "pretrain.lr = " << real_text(pretrain_lr) << "\n";
    return os.str();
}

std::string default_config_text() {
    return R"(# Run configuration. Flat key = value lines, '#' starts a comment.
# Unknown and duplicate keys are rejected; every value is range-checked.

seed = 0                      # master seed, >= 0

data.manifest =               # JSONL manifest of degraded/clean pairs
out.dir =                     # directory for checkpoints, logs, samples

schedule.steps = 100          # diffusion timesteps T, 1..1000
schedule.beta_start = 0.0001  # first-step noise variance, (0, 1)
schedule.beta_end = 0.02      # last-step noise variance, >= beta_start

init.width = 16               # initial predictor base channels, 1..512
init.enc_blocks = 1,1         # blocks per encoder stage, 1..4 stages of 0..8
init.middle_blocks = 1        # blocks at the bottleneck, 0..8
init.dec_blocks = 1,1         # blocks per decoder stage, mirrors encoder
init.expansion = 2            # gate channel multiplier, 1..8

den.width = 16                # denoiser base channels
den.enc_blocks = 1,1
den.middle_blocks = 1
den.dec_blocks = 1,1
den.expansion = 2

time.dim = 16                 # sinusoidal embedding width, even, 2..256
time.mlp_hidden = 32          # embedding MLP hidden width, 1..1024

optim.lr = 0.0001             # Adam learning rate, (0, 1]
optim.beta1 = 0.9             # [0, 1)
optim.beta2 = 0.999           # [0, 1)
optim.clip_norm = 1           # global gradient-norm clip; <= 0 disables

train.steps = 2000            # optimization steps, 1..10000000
train.batch = 4               # patches per step, 1..256
train.patch = 32              # square patch side, multiple of the net's
                              # downsampling factor, 8..512
train.augment = true          # random crop/flip/rotation on plain pairs
train.detach_initial = false  # cut denoiser gradients into the predictor
train.log_every = 50          # steps between loss lines
train.checkpoint_every = 500  # steps between checkpoints
train.val_images = 2          # validation images scored per checkpoint, 0..64

sampler.kind = ode_solver     # ddim | ode_solver
sampler.steps = 20            # denoiser evaluations, 1..1000
sampler.order = 2             # ode_solver only: 1 | 2
sampler.spacing = uniform_lambda  # uniform_t | uniform_lambda

crnn.height = 32              # recognizer input height, 8..128
crnn.c1 = 16                  # first conv width, 1..256
crnn.c2 = 32                  # later conv width, 1..256
crnn.hidden = 32              # GRU hidden size per direction, 1..512

finetune.steps = 200          # recognizer-guided steps, 1..10000000
finetune.lr = 0.0001          # finetune learning rate, (0, 1]

pretrain.epochs = 40          # recognizer pretraining epochs, 1..100000
pretrain.lr = 0.003           # recognizer pretraining rate, (0, 1]
)";
}

}  // namespace docdpm
