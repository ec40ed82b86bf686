#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ifecf/io.hpp"
#include "support.hpp"

using namespace ifecf;
using ifecf::testing::Gen;
using json = nlohmann::json;

namespace {

// Fresh scratch directory per call, removed by the owner.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("ifecf_io_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path operator/(const std::string& s) const { return path / s; }
};

// Header bytes laid out by hand.
std::string header_oracle(std::uint8_t dtype, const Shape& shape) {
    std::string h = "CFT1";
    h += static_cast<char>(dtype);
    h += static_cast<char>(shape.size());
    h += '\0';
    h += '\0';
    for (std::size_t d : shape)
        for (int k = 0; k < 4; ++k) h += static_cast<char>((d >> (8 * k)) & 0xff);
    return h;
}

template <class T>
bool same_tensor_bits(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

struct Run {
    int code;
    std::string out, err;
};

Run cli(const std::string& args, const fs::path& scratch) {
    const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
    const std::string cmd = std::string(IFECF_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

const char* kTinyData = "--subjects 4 --trials 6 --channels 4 --frames 8 --lag-frames 2 "
                        "--responsive-channels 2 --min-offset 3";
const char* kTinyConfig = R"({"d": 4, "T": 8, "D": 4, "heads": 2, "batch": 8, "epochs": 2, "seed": 3})";

ModelConfig tiny_model(Variant v = Variant::ife_cf) {
    RunConfig c = RunConfig::from_json_text(kTinyConfig);
    c.model.variant = v;
    return c.model;
}

std::vector<std::string> read_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

Tensor<double> read_csv(const fs::path& path) {
    std::vector<std::vector<double>> rows;
    for (const auto& line : read_lines(read_file(path))) {
        std::vector<double> row;
        std::stringstream in(line);
        for (std::string cell; std::getline(in, cell, ',');) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    Tensor<double> m({rows.size(), rows.empty() ? 0 : rows[0].size()});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("tensor files round-trip every dtype and rank with the documented header") {
    ifecf::testing::for_all(71, 60, [](Gen& gen, std::size_t c) {
        Shape shape(gen.size(0, 4));
        for (auto& d : shape) d = gen.size(0, 5);
        if (c % 2) {
            const auto t = gen.tensor<float>(shape);
            const std::string bytes = encode_tensor(t);
            CHECK(bytes.substr(0, 8 + 4 * shape.size()) == header_oracle(0, shape));
            CHECK(bytes.size() == 8 + 4 * shape.size() + 4 * t.size());
            std::istringstream in(bytes);
            const AnyTensor any = read_tensor(in);
            REQUIRE(std::holds_alternative<Tensor<float>>(any));
            CHECK(same_tensor_bits(std::get<Tensor<float>>(any), t));
        } else {
            const auto t = gen.tensor<double>(shape);
            const std::string bytes = encode_tensor(t);
            CHECK(bytes.substr(0, 8 + 4 * shape.size()) == header_oracle(1, shape));
            CHECK(bytes.size() == 8 + 4 * shape.size() + 8 * t.size());
            std::istringstream in(bytes);
            const AnyTensor any = read_tensor(in);
            REQUIRE(std::holds_alternative<Tensor<double>>(any));
            CHECK(same_tensor_bits(std::get<Tensor<double>>(any), t));
        }
    });
}

TEST_CASE("payload values are little-endian IEEE") {
    Tensor<float> t({2}, std::vector<float>{1.0f, -2.5f});
    const std::string bytes = encode_tensor(t);
    const std::string payload = bytes.substr(12);
    CHECK(payload == std::string("\x00\x00\x80\x3f\x00\x00\x20\xc0", 8));
    std::istringstream in(bytes);
    const auto widened = read_tensor_as<double>(in);
    CHECK(widened[1] == -2.5);
}

TEST_CASE("malformed tensor files are rejected") {
    Gen gen(72);
    const std::string good = encode_tensor(gen.tensor<double>({3, 2}));
    auto rejects = [](std::string bytes) {
        std::istringstream in(bytes);
        CHECK_THROWS_AS(read_tensor(in), IoError);
    };
    std::string bad = good;
    bad[3] = '2';
    rejects(bad);
    bad = good;
    bad[6] = 1;
    rejects(bad);
    bad = good;
    bad[4] = 7;
    rejects(bad);
    rejects(good.substr(0, good.size() - 1));
    rejects(good.substr(0, 10));
    rejects("");
}

TEST_CASE("save and load go through a file") {
    TempDir dir("tensor");
    Gen gen(73);
    const auto t = gen.tensor<float>({4, 3});
    save_tensor(dir / "a.cft", t);
    CHECK(same_tensor_bits(load_tensor<float>(dir / "a.cft"), t));
    CHECK(load_tensor<double>(dir / "a.cft")[5] == static_cast<double>(t[5]));
    std::set<fs::path> names;
    for (const auto& e : fs::directory_iterator(dir.path)) names.insert(e.path().filename());
    CHECK(names == std::set<fs::path>{"a.cft"});
    CHECK_THROWS_AS(load_tensor<float>(dir / "missing.cft"), IoError);
}

TEST_CASE("run config round-trips and rejects unknown or ill-typed keys") {
    RunConfig c;
    c.model.variant = Variant::no_t;
    c.train.seed = 99;
    c.train.stop_at_val_acc = 0.93;
    const RunConfig back = RunConfig::from_json_text(c.to_json_text());
    CHECK(back.to_json_text() == c.to_json_text());
    CHECK(back.train.stop_at_val_acc == 0.93);
    CHECK(back.model.variant == Variant::no_t);
    CHECK_FALSE(RunConfig{}.train.stop_at_val_acc.has_value());

    const RunConfig defaults = RunConfig::from_json_text("{}");
    CHECK(defaults.model.d == 28);
    CHECK(defaults.model.frames == 192);
    CHECK(defaults.model.eeg_channels == 64);
    CHECK(defaults.model.heads == 4);
    CHECK(defaults.train.adam.lr == 1e-3);
    CHECK(defaults.train.batch_size == 64);
    CHECK(defaults.train.epochs == 30);
    CHECK(RunConfig::from_json_text(R"({"d": 8})").model.d_k == 8);

    auto message = [](const std::string& text) {
        try {
            RunConfig::from_json_text(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("accepted");
    };
    CHECK(message(R"({"learning_rate": 0.1})").find("learning_rate") != std::string::npos);
    CHECK(message(R"({"mel": {"hopp": 3}})").find("mel.hopp") != std::string::npos);
    CHECK(message(R"({"batch": "64"})").find("batch") != std::string::npos);
    CHECK(message(R"({"variant": "ife_xx"})") != "accepted");
    CHECK(message(R"({"heads": 3})") != "accepted");
    CHECK(message("[1, 2]") != "accepted");
    CHECK(message("{") != "accepted");
}

TEST_CASE("IFECF_SEED overrides the configured seed") {
    RunConfig c;
    ::setenv("IFECF_SEED", "1234", 1);
    c.apply_env_overrides();
    CHECK(c.train.seed == 1234);
    ::setenv("IFECF_SEED", "x1", 1);
    CHECK_THROWS_AS(c.apply_env_overrides(), ConfigError);
    ::unsetenv("IFECF_SEED");
}

TEST_CASE("a checkpoint round-trip reproduces the forward pass bit for bit") {
    const ModelConfig mc = tiny_model(Variant::no_m);
    RunConfig rc = RunConfig::from_json_text(kTinyConfig);
    rc.model = mc;
    Checkpoint ckpt{rc, ModelParams<float>::init(mc, 5), std::nullopt};
    ckpt.optim = make_optim_state(ckpt.params, rc.train.adam);
    ckpt.optim->step = 17;
    Gen gen(74);
    for (auto& t : ckpt.optim->m) t = gen.tensor<float>(t.shape());

    const std::string bytes = encode_checkpoint(ckpt);
    CHECK(bytes.substr(0, 4) == "CFC1");
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(back.config.to_json_text() == rc.to_json_text());
    CHECK(encode_checkpoint(back) == bytes);
    REQUIRE(back.optim.has_value());
    CHECK(back.optim->step == 17);
    CHECK(same_tensor_bits(back.optim->m[3], ckpt.optim->m[3]));

    Batch<float> batch{gen.tensor<float>({3, mc.d, mc.frames}), gen.tensor<float>({3, mc.eeg_channels, mc.frames}),
                       {1, 0, 1}};
    const auto a = model_forward(ckpt.params, batch, Mode::eval);
    const auto b = model_forward(back.params, batch, Mode::eval);
    CHECK(same_tensor_bits(a.embeddings, b.embeddings));
    for (std::size_t n = 0; n < 3; ++n) CHECK(a.predictions[n].logits == b.predictions[n].logits);

    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "z"), IoError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), IoError);
}

TEST_CASE("synthetic datasets load and manifests enforce the split rules") {
    TempDir dir("manifest");
    SynthConfig sc;
    sc.n_subjects = 4;
    sc.trials_per_subject = 6;
    sc.eeg_channels = 4;
    sc.frames = 8;
    sc.lag_frames = 2;
    sc.responsive_channels = 2;
    sc.mismatch_min_offset_frames = 3;
    const Manifest m = write_synthetic_dataset(dir / "ds", sc);
    CHECK(m.entries.size() == 4 * 6 * 2);
    const Manifest loaded = load_manifest(dir / "ds");
    REQUIRE(loaded.entries.size() == m.entries.size());
    REQUIRE(loaded.synth.has_value());
    CHECK(synth_config_to_json_text(*loaded.synth) == synth_config_to_json_text(sc));
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        CHECK(loaded.entries[i].speech_path == m.entries[i].speech_path);
        CHECK(loaded.entries[i].offset == m.entries[i].offset);
    }

    MelConfig mel = RunConfig::from_json_text(kTinyConfig).mel;
    const auto examples = load_dataset(dir / "ds", mel);
    REQUIRE(examples.size() == m.entries.size());
    for (const auto& e : examples) {
        CHECK(e.speech.shape() == Shape{4, 8});
        CHECK(e.eeg.shape() == Shape{4, 8});
    }

    json j = json::parse(read_file(dir / "ds" / "manifest.json"));
    std::size_t held_subject = 0;
    for (const auto& e : j["entries"])
        if (e["split"] == "held_out_subjects") held_subject = e["subject_id"];
    auto rewrite = [&](const json& doc) { atomic_write(dir / "ds" / "manifest.json", doc.dump()); };

    json leak = j;
    leak["entries"][0]["subject_id"] = held_subject;
    REQUIRE(leak["entries"][0]["split"] == "train");
    rewrite(leak);
    CHECK_THROWS_AS(load_manifest(dir / "ds"), IoError);

    json label = j;
    label["entries"][1]["label"] = 2;
    rewrite(label);
    CHECK_THROWS_AS(load_manifest(dir / "ds"), IoError);

    json split = j;
    split["entries"][1]["split"] = "test";
    rewrite(split);
    CHECK_THROWS_AS(load_manifest(dir / "ds"), IoError);

    json missing = j;
    missing["entries"][2]["speech_path"] = "speech/nope.cft";
    rewrite(missing);
    CHECK_THROWS_AS(load_dataset(dir / "ds", mel), IoError);

    CHECK_THROWS_AS(load_manifest(dir / "nowhere"), IoError);
}

TEST_CASE("matrix exports write parseable CSV and a P5 image") {
    Tensor<double> m({2, 3}, std::vector<double>{0.0, 0.5, 1.0, 0.25, 0.0, 2.0});
    const std::string pgm = matrix_pgm(m);
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(pgm.size() == header.size() + 6);
    CHECK(pgm.substr(0, header.size()) == header);
    const auto* px = reinterpret_cast<const unsigned char*>(pgm.data() + header.size());
    CHECK(std::vector<int>(px, px + 6) == std::vector<int>{0, 64, 128, 32, 0, 255});
    CHECK(matrix_csv(m) == "0,0.5,1\n0.25,0,2\n");
    CHECK_THROWS_AS(matrix_csv(Tensor<double>({3})), InputError);
}

TEST_CASE("cli: gen-data is deterministic and validates its flags") {
    TempDir dir("gen");
    const std::string tiny = kTinyData;
    REQUIRE(cli("gen-data --out " + (dir / "a").string() + " " + tiny, dir.path).code == 0);
    REQUIRE(cli("gen-data --out " + (dir / "b").string() + " " + tiny, dir.path).code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), dir / "a");
        CAPTURE(rel.string());
        CHECK(read_file(e.path()) == read_file(dir / "b" / rel));
        ++files;
    }
    CHECK(files == 1 + 4 * 6 * 3);  // manifest, EEG per trial, match and mismatch speech

    const Run lag = cli("gen-data --out " + (dir / "c").string() + " --lag-frames 200", dir.path);
    CHECK(lag.code != 0);
    CHECK(lag.err.find("lag") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "c" / "manifest.json"));
    CHECK(cli("gen-data --out " + (dir / "d").string() + " --subjects -3", dir.path).code != 0);
    CHECK(cli("gen-data --subjects 4", dir.path).code != 0);
    CHECK(cli("frobnicate", dir.path).code != 0);
}

TEST_CASE("cli: default split structure for 10 subjects and 20 trials") {
    TempDir dir("splits");
    REQUIRE(cli("gen-data --out " + (dir / "ds").string() +
                    " --subjects 10 --trials 20 --channels 4 --frames 8 --lag-frames 2 --responsive-channels 2 "
                    "--min-offset 3",
                dir.path)
                .code == 0);
    const Manifest m = load_manifest(dir / "ds");
    std::set<std::size_t> train, held;
    std::map<std::size_t, std::set<std::size_t>> train_trials, story_trials;
    for (const auto& e : m.entries) {
        if (e.split == Split::train) {
            train.insert(e.subject_id);
            train_trials[e.subject_id].insert(e.trial_id);
        }
        if (e.split == Split::held_out_subjects) held.insert(e.subject_id);
        if (e.split == Split::held_out_stories) story_trials[e.subject_id].insert(e.trial_id);
    }
    CHECK(train.size() == 8);
    CHECK(held.size() == 2);
    for (std::size_t s : held) CHECK_FALSE(train.count(s));
    CHECK(story_trials.size() == 8);
    for (const auto& [s, trials] : story_trials) {
        CHECK(train.count(s));
        for (std::size_t t : trials) CHECK_FALSE(train_trials[s].count(t));
    }
}

TEST_CASE("cli: train, eval and export-attention on a tiny dataset") {
    TempDir dir("pipeline");
    const std::string ds = (dir / "ds").string();
    REQUIRE(cli("gen-data --out " + ds + " " + kTinyData, dir.path).code == 0);
    atomic_write(dir / "cfg.json", kTinyConfig);
    const std::string ckpt = (dir / "m.ckpt").string();
    const Run train = cli("train --data " + ds + " --config " + (dir / "cfg.json").string() + " --out " + ckpt +
                              " --variant no_m",
                          dir.path);
    REQUIRE(train.code == 0);
    const auto log = read_lines(read_file(ckpt + ".log.jsonl"));
    REQUIRE(!log.empty());
    CHECK(json::parse(log.back())["val_acc"].is_number());
    CHECK(load_checkpoint(ckpt).config.model.variant == Variant::no_m);

    const Run eval = cli("eval --ckpt " + ckpt + " --data " + ds + " --out " + (dir / "rep").string(), dir.path);
    REQUIRE(eval.code == 0);
    const json rep = json::parse(read_file(dir / "rep.json"));
    for (const char* key : {"per_subject", "s1", "s2", "score"}) CHECK(rep.contains(key));
    CHECK(std::abs(rep["score"].get<double>() - (2.0 / 3.0 * rep["s2"].get<double>() + rep["s1"].get<double>() / 3.0)) <
          1e-9);
    CHECK(read_file(dir / "rep.txt").find("Score") != std::string::npos);

    const Run wrong = cli("eval --ckpt " + ckpt + " --data " + ds + " --variant ife_cf --out " +
                              (dir / "rep2").string(),
                          dir.path);
    CHECK(wrong.code != 0);
    CHECK(wrong.err.find("no_m") != std::string::npos);

    atomic_write(dir / "bad.json", R"({"d": 4, "T": 8, "D": 4, "heads": 2, "epochz": 2})");
    const Run bad = cli("train --data " + ds + " --config " + (dir / "bad.json").string() + " --out " +
                            (dir / "x.ckpt").string(),
                        dir.path);
    CHECK(bad.code != 0);
    CHECK(bad.err.find("epochz") != std::string::npos);

    const std::string prefix = (dir / "att").string();
    REQUIRE(cli("export-attention --ckpt " + ckpt + " --data " + ds + " --pair 0,0 --block smca --out " + prefix,
                dir.path)
                .code == 0);
    const std::size_t heads = 2;
    for (const std::string stage : {"pre", "post"}) {
        for (std::size_t h = 0; h <= heads; ++h) {
            const std::string name = prefix + "_" + stage + (h < heads ? "_head" + std::to_string(h) : "_mean");
            const auto m = read_csv(name + ".csv");
            CHECK(m.shape() == Shape{8, 8});
            for (std::size_t i = 0; i < 8; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < 8; ++j) row += m(i, j);
                CHECK(std::abs(row - 1.0) < 1e-9);
            }
            // no_m has no causal mask, so its post-mask map is the unmasked one.
            if (stage == "post") {
                const std::string pre = prefix + "_pre" + name.substr(prefix.size() + 5);
                CHECK(read_file(name + ".csv") == read_file(pre + ".csv"));
            }
            const std::string pgm = read_file(name + ".pgm");
            CHECK(pgm.substr(0, 11) == "P5\n8 8\n255\n");
            CHECK(pgm.size() == 11 + 64);
        }
    }
    CHECK(cli("export-attention --ckpt " + ckpt + " --data " + ds + " --pair 0,99 --block smca --out " + prefix,
              dir.path)
              .code != 0);
    CHECK(cli("export-attention --ckpt " + ckpt + " --data " + ds + " --pair 0,0 --block xyz --out " + prefix,
              dir.path)
              .code != 0);
}

TEST_CASE("cli: injected predictions reproduce a published score row") {
    // One subject per held-out split with 10000 pairs each, so the split
    // accuracies 77.98 and 78.55 are exact.
    TempDir dir("inject");
    json entries = json::array();
    json predictions = json::array();
    auto add = [&](std::size_t subject, const char* split, std::size_t n, std::size_t correct) {
        for (std::size_t i = 0; i < n; ++i) {
            const int label = static_cast<int>(i % 2);
            entries.push_back({{"subject_id", subject}, {"trial_id", i / 2}, {"speech_path", "s.cft"},
                               {"eeg_path", "e.cft"}, {"split", split}, {"label", label}});
            predictions.push_back(i < correct ? label : 1 - label);
        }
    };
    add(0, "train", 4, 4);
    add(0, "held_out_stories", 10000, 7798);
    add(1, "held_out_subjects", 10000, 7855);
    fs::create_directories(dir / "ds");
    atomic_write(dir / "ds" / "manifest.json", json{{"entries", entries}}.dump());
    atomic_write(dir / "pred.json", predictions.dump());
    const Run r = cli("eval --data " + (dir / "ds").string() + " --predictions " + (dir / "pred.json").string() +
                          " --out " + (dir / "rep").string(),
                      dir.path);
    REQUIRE(r.code == 0);
    const json rep = json::parse(read_file(dir / "rep.json"));
    CHECK(std::abs(rep["s2"].get<double>() - 0.7798) < 1e-12);
    CHECK(std::abs(rep["s1"].get<double>() - 0.7855) < 1e-12);
    CHECK(std::abs(rep["score"].get<double>() - 0.7817) < 5e-5);
    CHECK(read_file(dir / "rep.txt").find("78.17") != std::string::npos);

    // Without any held-out-subject pairs the report cannot be formed.
    json only_stories = json::array();
    for (const auto& e : entries)
        if (e["split"] != "held_out_subjects") only_stories.push_back(e);
    atomic_write(dir / "ds" / "manifest.json", json{{"entries", only_stories}}.dump());
    json fewer = json::array();
    for (std::size_t i = 0; i < only_stories.size(); ++i) fewer.push_back(0);
    atomic_write(dir / "pred.json", fewer.dump());
    const Run empty = cli("eval --data " + (dir / "ds").string() + " --predictions " +
                              (dir / "pred.json").string() + " --out " + (dir / "rep").string(),
                          dir.path);
    CHECK(empty.code != 0);
    CHECK(empty.err.find("held_out_subjects") != std::string::npos);
}

TEST_CASE("cli: gradcheck exit status and module filter") {
    TempDir dir("grad");
    const Run all = cli("gradcheck --tol 1e-4", dir.path);
    CHECK(all.code == 0);
    CHECK(all.out.find("gradcheck passed") != std::string::npos);

    const Run strict = cli("gradcheck --tol 1e-12", dir.path);
    CHECK(strict.code != 0);
    CHECK(strict.err.find("gradcheck failed") != std::string::npos);

    const Run attn = cli("gradcheck --modules crossmodal", dir.path);
    CHECK(attn.code == 0);
    const auto allowed = gradcheck_groups_for_module("crossmodal");
    std::size_t groups = 0;
    for (const auto& line : read_lines(attn.out)) {
        if (line.rfind("ok", 0) != 0 && line.rfind("FAIL", 0) != 0) continue;
        std::istringstream in(line.substr(5));
        std::string name;
        in >> name;
        CAPTURE(name);
        CHECK(std::any_of(allowed.begin(), allowed.end(),
                          [&](const std::string& p) { return name.rfind(p, 0) == 0; }));
        CHECK((name.find("smca") != std::string::npos || name.find("emca") != std::string::npos));
        ++groups;
    }
    CHECK(groups > 0);
    CHECK(cli("gradcheck --modules bogus", dir.path).code != 0);
}

}  // TEST_SUITE
