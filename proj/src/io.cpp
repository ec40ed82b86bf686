#include "ifecf/io.hpp"

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

#include "json.hpp"

namespace ifecf {

using json = nlohmann::json;

namespace {

constexpr char kTensorMagic[4] = {'C', 'F', 'T', '1'};
constexpr char kCheckpointMagic[4] = {'C', 'F', 'C', '1'};

template <class U>
void put_le(std::ostream& out, U value) {
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get_le(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw IoError(std::string("truncated file while reading ") + what);
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    U value;
    std::memcpy(&value, bytes, sizeof(U));
    return value;
}

template <class T>
constexpr std::uint8_t dtype_code() {
    return std::is_same_v<T, float> ? 0 : 1;
}

template <class T>
Tensor<T> read_payload(std::istream& in, Shape shape) {
    Tensor<T> t(std::move(shape));
    if constexpr (std::endian::native == std::endian::little) {
        const auto bytes = static_cast<std::streamsize>(t.size() * sizeof(T));
        if (!in.read(reinterpret_cast<char*>(t.data()), bytes)) {
            throw IoError("truncated tensor payload (expected " + std::to_string(bytes) + " bytes)");
        }
    } else {
        for (auto& v : t.values()) v = get_le<T>(in, "tensor payload");
    }
    return t;
}

std::string read_exact(std::istream& in, std::size_t n, const char* what) {
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
        throw IoError(std::string("truncated file while reading ") + what);
    }
    return s;
}

}  // namespace

template <class T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
    if (t.rank() > 255) throw IoError("tensor rank exceeds 255");
    out.write(kTensorMagic, 4);
    put_le<std::uint8_t>(out, dtype_code<T>());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    put_le<std::uint8_t>(out, 0);
    put_le<std::uint8_t>(out, 0);
    for (std::size_t d : t.shape()) {
        if (d > 0xffffffffULL) throw IoError("tensor dimension exceeds u32");
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    } else {
        for (T v : t.values()) put_le<T>(out, v);
    }
}

AnyTensor read_tensor(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4)) throw IoError("truncated tensor header");
    if (std::memcmp(magic, kTensorMagic, 4) != 0) throw IoError("bad tensor magic (expected CFT1)");
    const auto dtype = get_le<std::uint8_t>(in, "tensor dtype");
    const auto ndim = get_le<std::uint8_t>(in, "tensor rank");
    const auto r0 = get_le<std::uint8_t>(in, "tensor header");
    const auto r1 = get_le<std::uint8_t>(in, "tensor header");
    if (r0 != 0 || r1 != 0) throw IoError("tensor header reserved bytes are not zero");
    Shape shape(ndim);
    for (auto& d : shape) d = get_le<std::uint32_t>(in, "tensor dims");
    switch (dtype) {
        case 0: return read_payload<float>(in, std::move(shape));
        case 1: return read_payload<double>(in, std::move(shape));
        default: throw IoError("unknown tensor dtype code " + std::to_string(dtype));
    }
}

template <class T>
std::string encode_tensor(const Tensor<T>& t) {
    std::ostringstream out(std::ios::binary);
    write_tensor(out, t);
    return std::move(out).str();
}

template <class T>
Tensor<T> read_tensor_as(std::istream& in) {
    return std::visit([](auto&& t) { return t.template cast<T>(); }, read_tensor(in));
}

void atomic_write(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot rename onto '" + path.string() + "': " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

template <class T>
void save_tensor(const fs::path& path, const Tensor<T>& t) {
    atomic_write(path, encode_tensor(t));
}

template <class T>
Tensor<T> load_tensor(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file '" + path.string() + "'");
    try {
        return read_tensor_as<T>(in);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Run configuration

namespace {

// Reads typed values out of a JSON object, rejecting keys nobody asked for.
class ConfigReader {
public:
    ConfigReader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
        if (!obj_.is_object()) throw ConfigError("config" + where() + " must be a JSON object");
    }

    template <class V>
    void read(const char* key, V& out) {
        seen_.insert(key);
        const auto it = obj_.find(key);
        if (it == obj_.end()) return;
        try {
            if constexpr (std::is_same_v<V, std::size_t> || std::is_same_v<V, std::uint64_t>) {
                if (!it->is_number_unsigned()) throw ConfigError("");
            } else if constexpr (std::is_same_v<V, int>) {
                if (!it->is_number_integer()) throw ConfigError("");
            } else if constexpr (std::is_same_v<V, double>) {
                if (!it->is_number()) throw ConfigError("");
            } else if constexpr (std::is_same_v<V, bool>) {
                if (!it->is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_same_v<V, std::string>) {
                if (!it->is_string()) throw ConfigError("");
            }
            out = it->template get<V>();
        } catch (const std::exception&) {
            throw ConfigError("config key '" + prefix_ + key + "' has the wrong type");
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        const auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!seen_.count(key)) throw ConfigError("unknown config key '" + prefix_ + key + "'");
        }
    }

private:
    std::string where() const { return prefix_.empty() ? "" : " section '" + prefix_ + "'"; }

    const json& obj_;
    std::string prefix_;
    std::set<std::string> seen_;
};

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(what + " is not valid JSON: " + e.what());
    }
}

std::string window_name(WindowKind w) { return w == WindowKind::hann ? "hann" : "hamming"; }

WindowKind parse_window(const std::string& s) {
    if (s == "hann") return WindowKind::hann;
    if (s == "hamming") return WindowKind::hamming;
    throw ConfigError("unknown window '" + s + "' (expected hann or hamming)");
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    const json root = parse_json(text, "config");
    RunConfig c;
    ConfigReader r(root, "");
    r.read("d", c.model.d);
    r.read("T", c.model.frames);
    r.read("D", c.model.eeg_channels);
    std::size_t d_k = 0;
    r.read("d_k", d_k);
    c.model.d_k = root.contains("d_k") ? d_k : c.model.d;
    r.read("heads", c.model.heads);
    std::string variant = to_string(c.model.variant);
    r.read("variant", variant);
    c.model.variant = parse_variant(variant);
    std::string scale = to_string(c.model.scale);
    r.read("scale_mode", scale);
    c.model.scale = parse_score_scale(scale);
    r.read("batchnorm", c.model.batchnorm);
    r.read("bn_momentum", c.model.mfn.bn.momentum);
    r.read("bn_eps", c.model.mfn.bn.eps);
    r.read("lr", c.train.adam.lr);
    r.read("beta1", c.train.adam.beta1);
    r.read("beta2", c.train.adam.beta2);
    r.read("adam_eps", c.train.adam.eps);
    r.read("batch", c.train.batch_size);
    r.read("epochs", c.train.epochs);
    r.read("seed", c.train.seed);
    double stop = 0.0;
    r.read("stop_at_val_acc", stop);
    if (root.contains("stop_at_val_acc")) c.train.stop_at_val_acc = stop;
    if (const json* mel = r.child("mel")) {
        ConfigReader m(*mel, "mel.");
        m.read("sample_rate_hz", c.mel.sample_rate_hz);
        m.read("fft_size", c.mel.fft_size);
        m.read("hop", c.mel.hop);
        std::string window = window_name(c.mel.window);
        m.read("window", window);
        c.mel.window = parse_window(window);
        m.read("fmin_hz", c.mel.fmin_hz);
        m.read("fmax_hz", c.mel.fmax_hz);
        m.read("log_floor_eps", c.mel.log_floor_eps);
        m.finish();
    }
    r.finish();
    c.mel.n_mels = c.model.d;
    c.mel.frames = c.model.frames;
    c.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    try {
        return from_json_text(read_file(path));
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
}

std::string RunConfig::to_json_text() const {
    json j;
    j["d"] = model.d;
    j["T"] = model.frames;
    j["D"] = model.eeg_channels;
    j["d_k"] = model.d_k;
    j["heads"] = model.heads;
    j["variant"] = to_string(model.variant);
    j["scale_mode"] = to_string(model.scale);
    j["batchnorm"] = model.batchnorm;
    j["bn_momentum"] = model.mfn.bn.momentum;
    j["bn_eps"] = model.mfn.bn.eps;
    j["lr"] = train.adam.lr;
    j["beta1"] = train.adam.beta1;
    j["beta2"] = train.adam.beta2;
    j["adam_eps"] = train.adam.eps;
    j["batch"] = train.batch_size;
    j["epochs"] = train.epochs;
    j["seed"] = train.seed;
    if (train.stop_at_val_acc) j["stop_at_val_acc"] = *train.stop_at_val_acc;
    j["mel"] = {{"sample_rate_hz", mel.sample_rate_hz}, {"fft_size", mel.fft_size},
                {"hop", mel.hop},                      {"window", window_name(mel.window)},
                {"fmin_hz", mel.fmin_hz},              {"fmax_hz", mel.fmax_hz},
                {"log_floor_eps", mel.log_floor_eps}};
    return j.dump(2);
}

void RunConfig::validate() const {
    model.validate();
    if (mel.n_mels != model.d) throw ConfigError("mel bands must equal d");
    if (mel.frames != model.frames) throw ConfigError("mel frames must equal T");
    mel.validate();
    if (train.batch_size == 0) throw ConfigError("config key 'batch' must be positive");
    if (train.epochs == 0) throw ConfigError("config key 'epochs' must be positive");
    if (!(train.adam.lr > 0.0)) throw ConfigError("config key 'lr' must be positive");
    if (!(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0) ||
        !(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
}

void RunConfig::apply_env_overrides() {
    const char* seed = std::getenv("IFECF_SEED");
    if (!seed || !*seed) return;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(seed, &end, 10);
    if (errno != 0 || *end != '\0' || seed[0] == '-') {
        throw ConfigError(std::string("IFECF_SEED is not an unsigned integer: '") + seed + "'");
    }
    train.seed = v;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::ostringstream out(std::ios::binary);
    out.write(kCheckpointMagic, 4);
    const std::string cfg = ckpt.config.to_json_text();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    ckpt.params.visit_params([&](const std::string& n, const Tensor<float>& t) { tensors.emplace_back(n, &t); });
    ckpt.params.visit_buffers([&](const std::string& n, const Tensor<float>& t) { tensors.emplace_back(n, &t); });
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(out, *t);
    }
    put_le<std::uint8_t>(out, ckpt.optim ? 1 : 0);
    if (ckpt.optim) {
        put_le<std::uint64_t>(out, ckpt.optim->step);
        for (const auto& m : ckpt.optim->m) write_tensor(out, m);
        for (const auto& v : ckpt.optim->v) write_tensor(out, v);
    }
    return std::move(out).str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    if (read_exact(in, 4, "checkpoint magic") != std::string(kCheckpointMagic, 4)) {
        throw IoError("bad checkpoint magic (expected CFC1)");
    }
    const auto cfg_len = get_le<std::uint32_t>(in, "config length");
    Checkpoint ckpt;
    ckpt.config = RunConfig::from_json_text(read_exact(in, cfg_len, "config"));
    ckpt.params = ModelParams<float>::create(ckpt.config.model);

    std::map<std::string, Tensor<float>*> slots;
    ckpt.params.visit_params([&](const std::string& n, Tensor<float>& t) { slots[n] = &t; });
    ckpt.params.visit_buffers([&](const std::string& n, Tensor<float>& t) { slots[n] = &t; });
    const auto count = get_le<std::uint32_t>(in, "tensor count");
    std::set<std::string> loaded;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get_le<std::uint32_t>(in, "tensor name length");
        const std::string name = read_exact(in, len, "tensor name");
        const auto it = slots.find(name);
        if (it == slots.end()) throw IoError("checkpoint has unexpected tensor '" + name + "'");
        Tensor<float> t = read_tensor_as<float>(in);
        if (t.shape() != it->second->shape()) {
            throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) +
                          ", model expects " + shape_str(it->second->shape()));
        }
        *it->second = std::move(t);
        loaded.insert(name);
    }
    for (const auto& [name, slot] : slots) {
        if (!loaded.count(name)) throw IoError("checkpoint is missing tensor '" + name + "'");
    }
    const auto has_optim = get_le<std::uint8_t>(in, "optimizer flag");
    if (has_optim > 1) throw IoError("bad optimizer flag");
    if (has_optim) {
        OptimState<float> s = make_optim_state(ckpt.params, ckpt.config.train.adam);
        s.step = get_le<std::uint64_t>(in, "optimizer step");
        for (auto* moments : {&s.m, &s.v}) {
            for (auto& m : *moments) {
                Tensor<float> t = read_tensor_as<float>(in);
                if (t.shape() != m.shape()) throw IoError("optimizer moment shape mismatch");
                m = std::move(t);
            }
        }
        ckpt.optim = std::move(s);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint");
    return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    atomic_write(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Dataset directories

std::string synth_config_to_json_text(const SynthConfig& c) {
    json j;
    j["subjects"] = c.n_subjects;
    j["trials"] = c.trials_per_subject;
    j["T"] = c.frames;
    j["D"] = c.eeg_channels;
    j["lag_frames"] = c.lag_frames;
    // JSON has no infinity; a null SNR means noise disabled.
    j["snr_db"] = std::isinf(c.snr_db) ? json(nullptr) : json(c.snr_db);
    j["responsive_channels"] = c.responsive_channels;
    j["mismatch_min_offset_frames"] = c.mismatch_min_offset_frames;
    j["envelope_sigma_frames"] = c.envelope_sigma_frames;
    j["sample_rate_hz"] = c.sample_rate_hz;
    j["hop"] = c.hop;
    j["seed"] = c.seed;
    return j.dump(2);
}

SynthConfig synth_config_from_json_text(const std::string& text) {
    const json root = parse_json(text, "synthetic config");
    SynthConfig c;
    ConfigReader r(root, "synth.");
    r.read("subjects", c.n_subjects);
    r.read("trials", c.trials_per_subject);
    r.read("T", c.frames);
    r.read("D", c.eeg_channels);
    r.read("lag_frames", c.lag_frames);
    if (const json* snr = r.child("snr_db")) {
        if (snr->is_null()) c.snr_db = std::numeric_limits<double>::infinity();
        else if (snr->is_number()) c.snr_db = snr->get<double>();
        else throw ConfigError("config key 'synth.snr_db' has the wrong type");
    }
    r.read("responsive_channels", c.responsive_channels);
    r.read("mismatch_min_offset_frames", c.mismatch_min_offset_frames);
    r.read("envelope_sigma_frames", c.envelope_sigma_frames);
    r.read("sample_rate_hz", c.sample_rate_hz);
    r.read("hop", c.hop);
    r.read("seed", c.seed);
    r.finish();
    c.validate();
    return c;
}

Manifest load_manifest(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    if (!fs::exists(path)) throw IoError("no manifest.json in '" + dir.string() + "'");
    json root;
    try {
        root = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    Manifest m;
    try {
        if (root.contains("synth")) m.synth = synth_config_from_json_text(root.at("synth").dump());
        for (const auto& e : root.at("entries")) {
            ManifestEntry entry;
            entry.subject_id = e.at("subject_id").get<std::size_t>();
            entry.trial_id = e.at("trial_id").get<std::size_t>();
            entry.speech_path = e.at("speech_path").get<std::string>();
            entry.eeg_path = e.at("eeg_path").get<std::string>();
            entry.split = parse_split(e.at("split").get<std::string>());
            entry.label = e.at("label").get<int>();
            entry.offset = e.value("offset", std::size_t{0});
            if (entry.label != 0 && entry.label != 1) throw IoError("label must be 0 or 1");
            m.entries.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed manifest: " + e.what());
    } catch (const Error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    std::set<std::size_t> train_subjects, held_subjects;
    for (const auto& e : m.entries) {
        if (e.split == Split::train) train_subjects.insert(e.subject_id);
        if (e.split == Split::held_out_subjects) held_subjects.insert(e.subject_id);
    }
    for (std::size_t s : held_subjects) {
        if (train_subjects.count(s)) {
            throw IoError(path.string() + ": held-out subject " + std::to_string(s) + " also appears in train");
        }
    }
    return m;
}

Manifest write_synthetic_dataset(const fs::path& dir, const SynthConfig& cfg) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(dir / "speech", ec);
    fs::create_directories(dir / "eeg", ec);
    if (ec || !fs::is_directory(dir / "speech")) {
        throw IoError("cannot create dataset directory '" + dir.string() + "'");
    }
    const std::vector<TrialRef> trials = all_trials(cfg);
    Manifest manifest;
    manifest.synth = cfg;
    manifest.entries.resize(2 * trials.size());
    std::vector<std::exception_ptr> errors(trials.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < trials.size(); ++i) {
        try {
            const auto [s, k] = trials[i];
            const auto pairs = make_pairs({trials[i]}, cfg);
            const std::string stem = "s" + std::to_string(s) + "_t" + std::to_string(k);
            const std::string eeg_path = "eeg/" + stem + ".cft";
            save_tensor(dir / eeg_path, pairs[0].eeg.data.cast<float>());
            const Split split = split_of(cfg, s, k);
            for (std::size_t j = 0; j < 2; ++j) {
                const TrialPair& p = pairs[j];
                const std::string speech_path =
                    "speech/" + stem + (p.label == kMatch ? "_match" : "_mismatch") + ".cft";
                const std::vector<float> samples(p.speech.samples.begin(), p.speech.samples.end());
                save_tensor(dir / speech_path, Tensor<float>({samples.size()}, samples));
                manifest.entries[2 * i + j] = {s, k, speech_path, eeg_path, split, p.label, p.speech_offset_frames};
            }
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    json entries = json::array();
    for (const auto& e : manifest.entries) {
        entries.push_back({{"subject_id", e.subject_id},
                           {"trial_id", e.trial_id},
                           {"speech_path", e.speech_path},
                           {"eeg_path", e.eeg_path},
                           {"split", to_string(e.split)},
                           {"label", e.label},
                           {"offset", e.offset}});
    }
    json root;
    root["synth"] = json::parse(synth_config_to_json_text(cfg));
    root["entries"] = std::move(entries);
    atomic_write(dir / "manifest.json", root.dump(1) + "\n");
    return manifest;
}

std::vector<Example> load_dataset(const fs::path& dir, const MelConfig& mel_cfg) {
    const Manifest m = load_manifest(dir);
    if (m.entries.empty()) throw IoError("manifest in '" + dir.string() + "' has no entries");
    const MelSpectrogram mel(mel_cfg);
    const int rate = m.synth ? m.synth->sample_rate_hz : mel_cfg.sample_rate_hz;
    std::vector<Example> out(m.entries.size());
    std::vector<std::exception_ptr> errors(m.entries.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        try {
            const ManifestEntry& e = m.entries[i];
            const Tensor<double> speech = load_tensor<double>(dir / e.speech_path);
            const Tensor<double> eeg = load_tensor<double>(dir / e.eeg_path);
            if (speech.rank() != 1) throw IoError(e.speech_path + ": speech must be a 1-D waveform");
            if (eeg.rank() != 2) throw IoError(e.eeg_path + ": EEG must be D x T");
            Example& ex = out[i];
            ex.speech = speech_feature(SpeechWaveform{speech.values(), rate}, mel).cast<float>();
            ex.eeg = eeg.cast<float>();
            ex.label = e.label;
            ex.subject = e.subject_id;
            ex.trial = e.trial_id;
            ex.split = e.split;
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// ---------------------------------------------------------------------------
// Reports and exports

std::string log_record_json(const LogRecord& r) {
    json j;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["loss"] = r.loss;
    j["val_acc"] = r.val_acc ? json(*r.val_acc) : json(nullptr);
    return j.dump();
}

std::string report_json(const EvalReport& report) {
    json j;
    j["per_subject"] = report.per_subject;
    j["s1"] = report.s1;
    j["s2"] = report.s2;
    j["score"] = report.score;
    return j.dump(2) + "\n";
}

std::string report_text(const EvalReport& report, const std::string& method) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << std::left << std::setw(12) << "Method" << std::right << std::setw(18) << "Held-out stories"
        << std::setw(19) << "Held-out subjects" << std::setw(9) << "Score" << "\n";
    out << std::left << std::setw(12) << method << std::right << std::setw(18) << 100.0 * report.s2
        << std::setw(19) << 100.0 * report.s1 << std::setw(9) << 100.0 * report.score << "\n\n";
    out << "Subject  Accuracy\n";
    for (const auto& [subject, acc] : report.per_subject) {
        out << std::left << std::setw(9) << subject << std::right << std::setw(8) << 100.0 * acc << "\n";
    }
    return out.str();
}

std::string matrix_csv(const Tensor<double>& m) {
    if (m.rank() != 2) throw InputError("matrix_csv: expected a matrix");
    std::string out;
    char buf[32];
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        for (std::size_t j = 0; j < m.dim(1); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
            if (j) out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

std::string matrix_pgm(const Tensor<double>& m) {
    if (m.rank() != 2) throw InputError("matrix_pgm: expected a matrix");
    const double peak = *std::max_element(m.values().begin(), m.values().end());
    std::string out = "P5\n" + std::to_string(m.dim(1)) + " " + std::to_string(m.dim(0)) + "\n255\n";
    for (double v : m.values()) {
        const double scaled = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) * 255.0 : 0.0;
        out += static_cast<char>(static_cast<unsigned char>(std::lround(scaled)));
    }
    return out;
}

#define IFECF_INSTANTIATE_IO(T)                                              \
    template void write_tensor<T>(std::ostream&, const Tensor<T>&);          \
    template std::string encode_tensor<T>(const Tensor<T>&);                 \
    template Tensor<T> read_tensor_as<T>(std::istream&);                     \
    template void save_tensor<T>(const fs::path&, const Tensor<T>&);         \
    template Tensor<T> load_tensor<T>(const fs::path&);

IFECF_INSTANTIATE_IO(float)
IFECF_INSTANTIATE_IO(double)

}  // namespace ifecf
