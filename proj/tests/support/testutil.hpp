#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace gdmsr::testing {

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "gdmsr_test");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

void write_file(const std::filesystem::path& p, const std::string& contents);
std::string read_file(const std::filesystem::path& p);
bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace gdmsr::testing
