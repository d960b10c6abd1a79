#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmq/dataset.hpp"
#include "gmq/forecaster.hpp"
#include "gmq/synthetic.hpp"

namespace gmq::io {

inline constexpr int kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'G', 'M', 'Q', 'C', 'K', 'P', 'T', '\0'};

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Splits one CSV line on commas outside double quotes; quotes are dropped.
std::vector<std::string> split_csv(const std::string& line);
double parse_double(const std::string& s, const std::string& what);

/// dataset.json manifest plus series.csv, observations.csv and future.csv.
void save_dataset(const SeriesDataset& ds, const std::filesystem::path& dir);
/// Throws FormatError on malformed files; the result is validated.
SeriesDataset load_dataset(const std::filesystem::path& dir);

/// Oracle metadata (oracle.json).
void save_oracle(const SyntheticSuite& suite, const std::filesystem::path& file);
SyntheticSuite load_oracle(const std::filesystem::path& file);

struct CheckpointMeta {
    nlohmann::json training = nlohmann::json::object();
};

/// Magic, u32 version, u64 header length, JSON header, then each tensor as
/// u32 rank, u64 dims, little-endian f64 values.
std::string checkpoint_bytes(const GmqModel& model, const CheckpointMeta& meta);
GmqModel parse_checkpoint(const std::string& bytes, CheckpointMeta* meta = nullptr);

void save_checkpoint(const GmqModel& model, const CheckpointMeta& meta, const std::filesystem::path& file);
GmqModel load_checkpoint(const std::filesystem::path& file, CheckpointMeta* meta = nullptr);

std::string read_file(const std::filesystem::path& file);
/// Writes atomically enough for single-process use; throws FormatError when the path is unwritable.
void write_file(const std::filesystem::path& file, const std::string& content);

nlohmann::json model_config_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace gmq::io
