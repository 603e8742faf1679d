#include "cafenet/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "cafenet/nn/ops.hpp"

namespace cafenet::trainer {

using datasets::Scheme;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[32];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long parse_long(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long out = std::stol(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Config, key + ": expected an integer, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorKind::Config, key + ": expected a boolean, got '" + v + "'");
}

bool set_train_key(TrainConfig& c, const std::string& key, const std::string& v) {
    if (key == "scheme") c.scheme = datasets::parse_scheme(v);
    else if (key == "split_index") c.split_index = static_cast<int>(parse_long(key, v));
    else if (key == "episodes") c.episodes_total = parse_long(key, v);
    else if (key == "lr") c.lr = parse_double(key, v);
    else if (key == "lr_decay_factor") c.lr_decay_factor = parse_double(key, v);
    else if (key == "decay_at_episode") c.decay_at_episode = parse_long(key, v);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
    else if (key == "adam_beta1") c.adam_beta1 = parse_double(key, v);
    else if (key == "adam_beta2") c.adam_beta2 = parse_double(key, v);
    else if (key == "adam_eps") c.adam_eps = parse_double(key, v);
    else if (key == "n_way") c.n_way = static_cast<int>(parse_long(key, v));
    else if (key == "shots_train") c.shots_train = static_cast<int>(parse_long(key, v));
    else if (key == "shots" || key == "shots_eval") c.shots_eval = static_cast<int>(parse_long(key, v));
    else if (key == "n_query") c.n_query = static_cast<int>(parse_long(key, v));
    else if (key == "balanced_ce") c.balanced_ce = parse_bool(key, v);
    else if (key == "augment") c.augment = parse_bool(key, v);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_long(key, v));
    else if (key == "log_every") c.log_every = static_cast<int>(parse_long(key, v));
    else if (key == "checkpoint_every") c.checkpoint_every = static_cast<int>(parse_long(key, v));
    else if (key == "out_dir") c.out_dir = v;
    else if (key == "encoder_weights") c.encoder_weights = v;
    else return false;
    return true;
}

const std::map<std::string, std::string>& key_help() {
    static const std::map<std::string, std::string> help = {
        {"scheme", "dataset scheme: fse1000 or sbd5i"},
        {"split_index", "sbd5i split i in 0..3"},
        {"episodes", "total training episodes"},
        {"lr", "AdamW learning rate"},
        {"lr_decay_factor", "lr multiplier after decay_at_episode"},
        {"decay_at_episode", "episode after which lr is decayed"},
        {"weight_decay", "decoupled weight decay on conv weights"},
        {"adam_beta1", "first-moment decay"},
        {"adam_beta2", "second-moment decay"},
        {"adam_eps", "Adam denominator epsilon"},
        {"n_way", "classes per episode (N_c)"},
        {"shots_train", "support shots while training; 0 derives it (5 when shots_eval is 1)"},
        {"shots_eval", "support shots at evaluation (N_s); alias: shots"},
        {"n_query", "queries per class (N_q)"},
        {"balanced_ce", "class-balanced cross-entropy"},
        {"augment", "random quarter-turn rotation per training item"},
        {"seed", "root seed for sampling, augmentation and evaluation"},
        {"log_every", "episodes between log records"},
        {"checkpoint_every", "episodes between checkpoints"},
        {"out_dir", "training output directory"},
        {"encoder_weights", "optional checkpoint with encoder.* tensors"},
        {"encoder", "encoder preset: tiny or resnet34 (resets widths)"},
        {"stage_channels", "encoder stage widths"},
        {"stage_blocks", "residual blocks per stage"},
        {"bottleneck_channels", "side-output width of S^(0..4)"},
        {"decoder_channels", "widths of D^(0..4)"},
        {"aspp_rates", "ASPP dilation rates"},
        {"splits", "MSMR split count K"},
        {"lambda", "attention threshold"},
        {"dilation_radius", "attention dilation radius"},
        {"tau_init", "initial matching temperature"},
        {"tau_floor", "lower bound on the temperature"},
        {"residual_gain", "initial scale of each residual branch"},
        {"use_seg", "segmentation branch and loss"},
        {"use_attention", "segmentation-driven attention on side outputs"},
        {"use_msmr", "multi-split matching regularisation"},
        {"proto_mask_sum", "normalise prototypes by mask weight instead of N_s*H*W"},
        {"match_mode", "mask used for attention: full or average"},
        {"init_seed", "parameter initialisation seed"},
    };
    return help;
}

bool all_finite(const std::vector<double>& values) {
    for (double v : values)
        if (!std::isfinite(v))
            return false;
    return true;
}

// ---- little binary helpers ------------------------------------------------------

template <typename T>
void put(std::string& out, const T& value) {
    out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_doubles(std::string& out, const std::vector<double>& values) {
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
    require(pos + sizeof(T) <= in.size(), ErrorKind::Corruption, "checkpoint truncated");
    T value;
    std::memcpy(&value, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

constexpr char kMagic[8] = {'C', 'A', 'F', 'E', 'N', 'E', 'T', '\0'};

void write_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
    }
    fs::rename(tmp, path);
}

struct RawCheckpoint {
    json header;
    std::string bytes;
    std::size_t payload = 0; // offset of the tensor data
};

RawCheckpoint read_raw_checkpoint(const fs::path& path) {
    require(fs::exists(path), ErrorKind::MissingSource, "checkpoint not found: " + path.string());
    std::ifstream in(path, std::ios::binary);
    RawCheckpoint raw;
    raw.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    const std::string& b = raw.bytes;
    require(b.size() >= sizeof(kMagic) + 4 + 8 + 4, ErrorKind::Corruption,
            "checkpoint truncated: " + path.string());
    require(std::memcmp(b.data(), kMagic, sizeof(kMagic)) == 0, ErrorKind::Corruption,
            "not a checkpoint file: " + path.string());
    std::size_t pos = sizeof(kMagic);
    const auto version = get<std::uint32_t>(b, pos);
    require(version == kCheckpointVersion, ErrorKind::Version,
            "checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointVersion) + "); re-export it with a matching release");
    const auto header_len = get<std::uint64_t>(b, pos);
    require(header_len <= b.size() - pos - 4, ErrorKind::Corruption,
            "checkpoint truncated: " + path.string());
    const std::size_t body_end = b.size() - 4;
    std::size_t tail = body_end;
    const auto stored_crc = get<std::uint32_t>(b, tail);
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(b.data()), static_cast<uInt>(body_end)));
    require(crc == stored_crc, ErrorKind::Corruption,
            "checkpoint checksum mismatch (truncated or damaged): " + path.string());
    try {
        raw.header = json::parse(b.substr(pos, header_len));
    } catch (const json::exception& e) {
        fail(ErrorKind::Corruption, std::string("checkpoint header does not parse: ") + e.what());
    }
    raw.payload = pos + header_len;
    return raw;
}

model::ModelConfig config_from_json(const json& j) {
    model::ModelConfig cfg;
    // encoder first: it resets the width presets
    if (j.contains("encoder"))
        cfg.set("encoder", j.at("encoder").get<std::string>());
    for (const auto& [key, value] : j.items())
        if (key != "encoder")
            require(cfg.set(key, value.get<std::string>()), ErrorKind::Schema,
                    "checkpoint has unknown model key '" + key + "'");
    return cfg;
}

} // namespace

// ---- config --------------------------------------------------------------------------

TrainConfig TrainConfig::defaults(Scheme scheme) {
    TrainConfig c;
    c.scheme = scheme;
    if (scheme == Scheme::Sbd5i) {
        c.episodes_total = 30000;
        c.decay_at_episode = 28000;
    }
    return c;
}

TrainConfig TrainConfig::resolved() const {
    TrainConfig c = *this;
    if (c.shots_eval == 1)
        c.shots_train = 5;
    else if (c.shots_train <= 0)
        c.shots_train = c.shots_eval;
    require(c.shots_eval >= 1 && c.shots_train >= 1, ErrorKind::Config, "shots must be >= 1");
    require(c.n_way >= 1 && c.n_query >= 1, ErrorKind::Config, "n_way and n_query must be >= 1");
    require(c.episodes_total >= 0, ErrorKind::Config, "episodes must be >= 0");
    require(c.lr >= 0.0 && c.weight_decay >= 0.0, ErrorKind::Config, "lr and weight_decay must be >= 0");
    require(c.log_every >= 1 && c.checkpoint_every >= 1, ErrorKind::Config,
            "log_every and checkpoint_every must be >= 1");
    require(c.scheme != Scheme::Sbd5i || (c.split_index >= 0 && c.split_index < datasets::kSbdSplits),
            ErrorKind::InvalidInput,
            "invalid split index " + std::to_string(c.split_index) + " (valid range 0-3)");
    c.model.validate();
    return c;
}

episodes::Protocol TrainConfig::train_protocol() const {
    const TrainConfig r = resolved();
    return {r.n_way, r.shots_train, r.n_query};
}

episodes::Protocol TrainConfig::eval_protocol() const { return {n_way, shots_eval, n_query}; }

std::map<std::string, std::string> TrainConfig::to_map() const {
    std::map<std::string, std::string> m = model.to_map();
    m["scheme"] = std::string(datasets::to_string(scheme));
    m["split_index"] = std::to_string(split_index);
    m["episodes"] = std::to_string(episodes_total);
    m["lr"] = fmt_double(lr);
    m["lr_decay_factor"] = fmt_double(lr_decay_factor);
    m["decay_at_episode"] = std::to_string(decay_at_episode);
    m["weight_decay"] = fmt_double(weight_decay);
    m["adam_beta1"] = fmt_double(adam_beta1);
    m["adam_beta2"] = fmt_double(adam_beta2);
    m["adam_eps"] = fmt_double(adam_eps);
    m["n_way"] = std::to_string(n_way);
    m["shots_train"] = std::to_string(shots_train);
    m["shots_eval"] = std::to_string(shots_eval);
    m["n_query"] = std::to_string(n_query);
    m["balanced_ce"] = balanced_ce ? "true" : "false";
    m["augment"] = augment ? "true" : "false";
    m["seed"] = std::to_string(seed);
    m["log_every"] = std::to_string(log_every);
    m["checkpoint_every"] = std::to_string(checkpoint_every);
    m["out_dir"] = out_dir;
    m["encoder_weights"] = encoder_weights;
    return m;
}

std::vector<ConfigKey> config_keys(Scheme scheme) {
    std::vector<ConfigKey> out;
    for (const auto& [key, value] : TrainConfig::defaults(scheme).to_map()) {
        auto it = key_help().find(key);
        out.push_back({key, value, it == key_help().end() ? "" : it->second});
    }
    return out;
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::Config,
                origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        require(!key.empty(), ErrorKind::Config, origin + ":" + std::to_string(line_no) + ": empty key");
        out.emplace_back(key, trim(line.substr(eq + 1)));
    }
    return out;
}

KeyValues read_config_file(const fs::path& path) {
    require(fs::exists(path), ErrorKind::MissingSource, "config file not found: " + path.string());
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str(), path.string());
}

TrainConfig build_config(const KeyValues& entries) {
    Scheme scheme = Scheme::Fse1000;
    for (const auto& [key, value] : entries)
        if (key == "scheme")
            scheme = datasets::parse_scheme(value);
    TrainConfig c = TrainConfig::defaults(scheme);
    for (const auto& [key, value] : entries)
        if (key == "encoder")
            c.model.set(key, value);
    for (const auto& [key, value] : entries) {
        if (key == "encoder") continue;
        if (set_train_key(c, key, value)) continue;
        require(c.model.set(key, value), ErrorKind::Config, "unknown config key '" + key + "'");
    }
    return c;
}

double lr_at(const TrainConfig& config, long episode) {
    return episode > config.decay_at_episode ? config.lr * config.lr_decay_factor : config.lr;
}

// ---- optimisation -------------------------------------------------------------------------

void AdamState::ensure(const model::CafeNet& net) {
    const auto& params = net.parameters();
    if (m.size() == params.size()) return;
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.emplace_back(p.var->value.size(), 0.0);
        v.emplace_back(p.var->value.size(), 0.0);
    }
}

void zero_grad(model::CafeNet& net) {
    for (auto& p : net.parameters())
        p.var->grad.clear();
}

void adamw_step(model::CafeNet& net, AdamState& state, const TrainConfig& config, double lr) {
    state.ensure(net);
    ++state.step;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    auto& params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& value = p.var->value.data;
        if (p.decay && config.weight_decay > 0.0 && lr > 0.0) {
            const double shrink = 1.0 - lr * config.weight_decay;
            for (double& w : value)
                w *= shrink;
        }
        if (!p.var->has_grad()) continue;
        const auto& g = p.var->grad;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            if (lr > 0.0)
                value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.adam_eps);
        }
    }
    net.clamp_tau();
}

losses::Objective objective(const model::CafeNet& net, const episodes::EpisodeBatch& batch,
                            bool balanced_ce) {
    const auto& cfg = net.config();
    const auto outputs = net.forward(batch);
    std::vector<losses::SegTerms> seg_terms;
    std::vector<losses::EdgeTerms> edge_terms;
    for (std::size_t c = 0; c < outputs.size(); ++c)
        for (std::size_t q = 0; q < outputs[c].queries.size(); ++q) {
            const auto& out = outputs[c].queries[q];
            const auto& item = batch.classes[c].query[q];
            if (cfg.use_seg)
                seg_terms.push_back({out.full, cfg.use_msmr ? out.splits : std::vector<nn::Var>{},
                                     item.soft_seg});
            edge_terms.push_back({out.edge, item.edge});
        }
    losses::Objective obj;
    auto& r = obj.report;
    const nn::Var seg = cfg.use_seg ? losses::seg_loss(seg_terms, cfg.use_msmr, &r)
                                    : nn::constant(nn::Tensor(nn::Shape{}, 0.0));
    const nn::Var ce = losses::ce_loss(edge_terms, balanced_ce, &r.ce_raw);
    const nn::Var dice = losses::dice_loss(edge_terms, &r.dice_raw);
    r.l_seg = nn::scalar(seg);
    r.l_ce = nn::scalar(ce);
    r.l_dice = nn::scalar(dice);
    obj.total = losses::total_loss(seg, ce, dice);
    r.l_final = nn::scalar(obj.total);
    return obj;
}

losses::LossReport train_step(model::CafeNet& net, const episodes::EpisodeBatch& batch,
                              AdamState& state, const TrainConfig& config, double lr) {
    zero_grad(net);
    losses::Objective obj = objective(net, batch, config.balanced_ce);
    nn::backward(obj.total);
    for (const auto& p : net.parameters())
        require(all_finite(p.var->grad), ErrorKind::Numeric, "non-finite gradient in " + p.name);
    adamw_step(net, state, config, lr);
    return obj.report;
}

episodes::EpisodeBatch training_batch(const TrainConfig& config, episodes::SampleLoader& loader,
                                      long index) {
    Rng rng(episodes::episode_seed(config.seed, static_cast<std::uint64_t>(index)));
    const auto plan = episodes::sample_plan(loader.manifest(), datasets::Role::Train,
                                            config.train_protocol(), rng);
    auto episode = episodes::load_episode(plan, loader);
    episode = episodes::preprocess(std::move(episode), episodes::Mode::Train, config.scheme, rng,
                                   config.augment);
    return episodes::derive_soft_labels(episode);
}

// ---- checkpoints ---------------------------------------------------------------------------

void save_checkpoint(const fs::path& path, const model::CafeNet& net, const AdamState& optimizer,
                     long episode, const std::map<std::string, std::string>& train) {
    const auto& params = net.parameters();
    const bool has_moments = optimizer.m.size() == params.size();
    json tensors = json::array();
    for (const auto& p : params) {
        const auto& s = p.var->value.shape;
        tensors.push_back({{"name", p.name}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    const json header = {
        {"format", "cafenet-checkpoint"},
        {"config", net.config().to_map()},
        {"train", train},
        {"episode", episode},
        {"optimizer_step", optimizer.step},
        {"tensors", tensors},
    };
    const std::string header_text = header.dump();

    std::string bytes(kMagic, sizeof(kMagic));
    put(bytes, kCheckpointVersion);
    put(bytes, static_cast<std::uint64_t>(header_text.size()));
    bytes += header_text;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& value = params[i].var->value.data;
        put_doubles(bytes, value);
        if (has_moments) {
            put_doubles(bytes, optimizer.m[i]);
            put_doubles(bytes, optimizer.v[i]);
        } else {
            const std::vector<double> zeros(value.size(), 0.0);
            put_doubles(bytes, zeros);
            put_doubles(bytes, zeros);
        }
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
    put(bytes, crc);
    write_atomic(path, bytes);
}

Checkpoint load_checkpoint(const fs::path& path, const model::ModelConfig* expected) {
    RawCheckpoint raw = read_raw_checkpoint(path);
    const json& h = raw.header;
    Checkpoint ck;
    model::ModelConfig cfg;
    try {
        require(h.at("format").get<std::string>() == "cafenet-checkpoint", ErrorKind::Schema,
                "unknown checkpoint format");
        cfg = config_from_json(h.at("config"));
        for (const auto& [key, value] : h.at("train").items())
            ck.train[key] = value.get<std::string>();
        ck.episode = h.at("episode").get<long>();
        ck.optimizer.step = h.at("optimizer_step").get<long>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("checkpoint header schema violation: ") + e.what());
    }
    if (expected) {
        const auto diffs = model::diff_fields(cfg, *expected);
        if (!diffs.empty()) {
            std::string msg = "checkpoint config does not match the requested model; differing fields:";
            for (const auto& d : diffs)
                msg += " " + d + " (checkpoint " + cfg.to_map().at(d) + ", requested " +
                       expected->to_map().at(d) + ")";
            fail(ErrorKind::Mismatch, msg);
        }
    }
    auto net = std::make_unique<model::CafeNet>(cfg);
    auto& params = net->parameters();
    const json& table = h.at("tensors");
    require(table.size() == params.size(), ErrorKind::Mismatch,
            "checkpoint holds " + std::to_string(table.size()) + " tensors, model expects " +
                std::to_string(params.size()));
    std::size_t pos = raw.payload;
    const std::size_t end = raw.bytes.size() - 4;
    std::vector<std::vector<double>> values(params.size());
    ck.optimizer.m.resize(params.size());
    ck.optimizer.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = table[i];
        const auto& s = params[i].var->value.shape;
        const auto shape = entry.at("shape").get<std::vector<int>>();
        require(entry.at("name").get<std::string>() == params[i].name &&
                    shape == std::vector<int>{s.n, s.c, s.h, s.w},
                ErrorKind::Mismatch, "checkpoint tensor '" + entry.at("name").get<std::string>() +
                                         "' does not match model tensor '" + params[i].name + "'");
        const std::size_t n = params[i].var->value.size();
        const std::size_t bytes = n * sizeof(double);
        require(pos + 3 * bytes <= end, ErrorKind::Corruption, "checkpoint truncated: " + path.string());
        for (auto* dst : {&values[i], &ck.optimizer.m[i], &ck.optimizer.v[i]}) {
            dst->resize(n);
            std::memcpy(dst->data(), raw.bytes.data() + pos, bytes);
            pos += bytes;
        }
    }
    require(pos == end, ErrorKind::Corruption, "checkpoint has trailing bytes: " + path.string());
    for (std::size_t i = 0; i < params.size(); ++i)
        params[i].var->value.data = std::move(values[i]);
    ck.net = std::move(net);
    return ck;
}

std::size_t load_encoder_weights(model::CafeNet& net, const fs::path& path) {
    RawCheckpoint raw = read_raw_checkpoint(path);
    const json& table = raw.header.at("tensors");
    std::size_t pos = raw.payload;
    std::size_t copied = 0;
    for (const auto& entry : table) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<int>>();
        std::size_t n = 1;
        for (int d : shape)
            n *= static_cast<std::size_t>(d);
        const std::size_t bytes = n * sizeof(double);
        require(pos + 3 * bytes <= raw.bytes.size() - 4, ErrorKind::Corruption,
                "checkpoint truncated: " + path.string());
        if (name.rfind("encoder.", 0) == 0) {
            for (auto& p : net.parameters()) {
                if (p.name != name || p.var->value.size() != n) continue;
                std::memcpy(p.var->value.data.data(), raw.bytes.data() + pos, bytes);
                ++copied;
            }
        }
        pos += 3 * bytes;
    }
    require(copied > 0, ErrorKind::Mismatch, "no encoder tensors matched in " + path.string());
    return copied;
}

// ---- run -------------------------------------------------------------------------------------

RunResult run(const TrainConfig& requested, const datasets::DatasetManifest& manifest,
              const RunOptions& options) {
    const TrainConfig config = requested.resolved();
    require(manifest.scheme == config.scheme, ErrorKind::Mismatch,
            "manifest scheme " + std::string(datasets::to_string(manifest.scheme)) +
                " does not match config scheme " + std::string(datasets::to_string(config.scheme)));
    const fs::path out_dir = config.out_dir;
    fs::create_directories(out_dir);
    const fs::path latest = out_dir / "latest.ckpt";
    const auto train_map = config.to_map();

    std::unique_ptr<model::CafeNet> net;
    AdamState state;
    long start = 0;
    if (options.resume && fs::exists(latest)) {
        Checkpoint ck = load_checkpoint(latest, &config.model);
        net = std::move(ck.net);
        state = std::move(ck.optimizer);
        start = ck.episode;
    } else {
        net = std::make_unique<model::CafeNet>(config.model);
        if (!config.encoder_weights.empty())
            load_encoder_weights(*net, config.encoder_weights);
    }
    state.ensure(*net);

    std::ofstream log(out_dir / "train_log.jsonl", std::ios::app);
    require(static_cast<bool>(log), ErrorKind::Io, "cannot open training log in " + out_dir.string());
    const auto protocol = config.train_protocol();
    log << json{{"type", "run"},
                {"seed", config.seed},
                {"start_episode", start},
                {"protocol", {{"n_way", protocol.n_classes},
                              {"shots", protocol.n_support},
                              {"n_query", protocol.n_query}}},
                {"config", train_map}}
               .dump()
        << std::endl;

    episodes::SampleLoader loader(manifest);
    RunResult result;
    int failures = 0;
    long done_this_call = 0;
    long episode = start;
    while (episode < config.episodes_total) {
        if (options.stop_after >= 0 && done_this_call >= options.stop_after) {
            result.checkpoint = latest;
            result.episodes_done = episode;
            return result;
        }
        const long number = episode + 1;
        const double lr = lr_at(config, number);
        const auto batch = training_batch(config, loader, episode);
        try {
            const auto report = train_step(*net, batch, state, config, lr);
            failures = 0;
            if (options.observer)
                options.observer(number, report);
            if (number % config.log_every == 0 || number == config.episodes_total)
                log << json{{"type", "episode"},
                            {"episode", number},
                            {"episode_seed", episodes::episode_seed(config.seed, static_cast<std::uint64_t>(episode))},
                            {"lr", lr},
                            {"l_seg", report.l_seg},
                            {"l_ce", report.l_ce},
                            {"l_dice", report.l_dice},
                            {"l_final", report.l_final},
                            {"tau", net->tau()->value.data[0]}}
                           .dump()
                    << std::endl;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Numeric) throw;
            zero_grad(*net);
            log << json{{"type", "skipped"}, {"episode", number}, {"error", e.what()}}.dump() << std::endl;
            if (++failures >= kMaxConsecutiveFailures)
                fail(ErrorKind::Numeric, "aborting after " + std::to_string(failures) +
                                             " consecutive non-finite steps (last: " + e.what() + ")");
        }
        ++episode;
        ++done_this_call;
        if (episode % config.checkpoint_every == 0 || episode == config.episodes_total)
            save_checkpoint(latest, *net, state, episode, train_map);
    }
    if (!fs::exists(latest))
        save_checkpoint(latest, *net, state, episode, train_map);
    const fs::path final_path = out_dir / "final.ckpt";
    fs::copy_file(latest, final_path, fs::copy_options::overwrite_existing);
    result.checkpoint = final_path;
    result.episodes_done = episode;
    result.completed = true;
    return result;
}

} // namespace cafenet::trainer
