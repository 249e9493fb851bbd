#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace neurocap {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

// Lowercased runs of ASCII letters/digits plus apostrophes; everything else separates.
std::vector<std::string> split_words(std::string_view text);

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

std::string base64_encode(std::string_view bytes);

std::size_t edit_distance(std::string_view a, std::string_view b);

std::string read_text_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename, so readers never see partial files.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Shortest round-trippable decimal form of a double.
std::string format_double(double v);

}  // namespace neurocap
