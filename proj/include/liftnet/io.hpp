#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "liftnet/dataset.hpp"
#include "liftnet/network.hpp"

namespace liftnet {

/// Shortest decimal string that round-trips to the exact same double.
std::string double_to_string(double v);
double double_from_string(const std::string& s);

nlohmann::json params_to_json(const NetworkParams& p);
NetworkParams params_from_json(const nlohmann::json& j);

void save_params(const std::filesystem::path& path, const NetworkParams& p);
NetworkParams load_params(const std::filesystem::path& path);

/// CSV with header x0..x{d-1},y0..y{d'-1}; one row per sample.
void save_dataset_csv(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset_csv(const std::filesystem::path& path, LossKind loss);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

} // namespace liftnet
