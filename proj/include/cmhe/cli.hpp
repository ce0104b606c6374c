#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cmhe::cli {

// Entry point shared by the executable and the tests. `args` excludes the
// program name. Returns the process exit code.
int run(const std::vector<std::string>& args);

// Resolved defaults for a subcommand; a --config document may only use these keys.
nlohmann::json default_config(const std::string& command);

// Recursively overlays `overlay` onto `base`, rejecting keys absent from `base`.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& context = "config");

using FileWriter = std::function<void(const std::filesystem::path&)>;

// Runs every writer against a temporary sibling first and renames only after
// all writes succeeded, so a failure leaves no partial outputs behind.
void write_files_atomically(const std::vector<std::pair<std::filesystem::path, FileWriter>>& files);
FileWriter text_writer(std::string content);

}  // namespace cmhe::cli
