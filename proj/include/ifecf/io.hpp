#pragma once

// File formats and run configuration.
//
// Tensor file ("CFT1"), little-endian:
//   magic "CFT1" | dtype u8 (0 = f32, 1 = f64) | ndim u8 | 2 zero bytes |
//   ndim x u32 dims | row-major payload
//
// Checkpoint ("CFC1"):
//   magic "CFC1" | u32 config length | config JSON |
//   u32 tensor count | per tensor: u32 name length, name, tensor file |
//   u8 has_optim | [u64 step, then m and v tensors in parameter order]
//
// Dataset manifest: manifest.json in the dataset directory with
//   {"synth": {...}, "entries": [{subject_id, trial_id, speech_path, eeg_path,
//    split, label, offset}, ...]}
// where paths are relative to the directory.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ifecf/datagen.hpp"
#include "ifecf/features.hpp"
#include "ifecf/head.hpp"
#include "ifecf/model.hpp"
#include "ifecf/train.hpp"

namespace ifecf {

namespace fs = std::filesystem;

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

template <class T>
void write_tensor(std::ostream& out, const Tensor<T>& t);
AnyTensor read_tensor(std::istream& in);

template <class T>
std::string encode_tensor(const Tensor<T>& t);

// Reads either dtype and converts to T.
template <class T>
Tensor<T> read_tensor_as(std::istream& in);

template <class T>
void save_tensor(const fs::path& path, const Tensor<T>& t);
template <class T>
Tensor<T> load_tensor(const fs::path& path);

// Writes to a sibling temporary file, then renames over `path`.
void atomic_write(const fs::path& path, const std::string& bytes);

std::string read_file(const fs::path& path);

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    ModelConfig model;
    MelConfig mel;
    TrainConfig train;

    // Throws ConfigError naming the first unknown or ill-typed key.
    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const fs::path& path);
    std::string to_json_text() const;

    // Keeps mel frames/bands tied to T/d and validates every module's constraints.
    void validate() const;
    // IFECF_SEED, when set, replaces train.seed.
    void apply_env_overrides();
};

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    RunConfig config;
    ModelParams<float> params;
    std::optional<OptimState<float>> optim;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

// ---------------------------------------------------------------------------
// Dataset directories

struct ManifestEntry {
    std::size_t subject_id = 0;
    std::size_t trial_id = 0;
    std::string speech_path;
    std::string eeg_path;
    Split split = Split::train;
    int label = 1;
    std::size_t offset = 0;  // stream frame where the speech segment starts
};

struct Manifest {
    std::optional<SynthConfig> synth;
    std::vector<ManifestEntry> entries;
};

std::string synth_config_to_json_text(const SynthConfig& cfg);
SynthConfig synth_config_from_json_text(const std::string& text);

Manifest load_manifest(const fs::path& dir);

// Generates every trial, writes speech (f32, samples) and EEG (f32, D x T)
// tensor files and the manifest. EEG files are shared by a trial's two pairs.
Manifest write_synthetic_dataset(const fs::path& dir, const SynthConfig& cfg);

// Loads and featurizes a dataset directory. Checks referenced files and that
// held-out subjects never appear in the train split.
std::vector<Example> load_dataset(const fs::path& dir, const MelConfig& mel);

// ---------------------------------------------------------------------------
// Reports and exports

std::string log_record_json(const LogRecord& r);

std::string report_json(const EvalReport& report);
std::string report_text(const EvalReport& report, const std::string& method);

std::string matrix_csv(const Tensor<double>& m);
// Binary PGM (P5), 8-bit, scaled so the largest entry maps to 255; zero stays 0.
std::string matrix_pgm(const Tensor<double>& m);

}  // namespace ifecf
