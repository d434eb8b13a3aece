#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedsdr {

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// shortest round-trip decimal form (std::to_chars); locale-free and stable
std::string format_double(double v);

// write to <path>.tmp in the same directory, then rename into place
void atomic_write(const std::filesystem::path& path, std::string_view content);
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

void append_line(const std::filesystem::path& path, std::string_view line);

}  // namespace fedsdr
