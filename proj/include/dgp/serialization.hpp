#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "dgp/schemes.hpp"

namespace dgp {

using Json = nlohmann::json;

/// Full-precision decimal text (%.17g), used for every CSV value.
std::string format_full(double v);

/// 64-bit FNV-1a of a byte string, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);

std::string read_text_file(const std::filesystem::path& path);
/// Creates missing parent directories. Raises IoError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Parses JSON text; syntax errors raise ConfigError with line and column.
Json parse_json(const std::string& text, const std::string& source);
Json read_json_file(const std::filesystem::path& path);

KernelFamily parse_kernel_family(const std::string& name);
MeanFunction parse_mean_function(const std::string& name);

Json kernel_to_json(const KernelSpec<double>& k);
KernelSpec<double> kernel_from_json(const Json& j);

Json model_to_json(const DgpModel<double>& model);
DgpModel<double> model_from_json(const Json& j);

/// Scheme, model and variational state. Matrices are stored as arrays of rows.
Json fitted_to_json(const FittedModel& fm);
FittedModel fitted_from_json(const Json& j);

}  // namespace dgp
