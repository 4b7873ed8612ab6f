// Runs every acceptance check once and prints one PASS/FAIL line each.
// Exit status is the number of failures (capped at 1 for ctest).

#include <cstdio>
#include <cstring>
#include <exception>

#include "bpclip/verify.hpp"

int main(int argc, char** argv) {
  bpclip::verify::Options opt;
  opt.text_bank = std::filesystem::path(BPCLIP_SOURCE_DIR) / "data" / "text_bank" / "default.bpta";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--quick") == 0) opt.include_slow = false;
  }
  int failed = 0;
  try {
    for (const auto& r : bpclip::verify::run_all(opt)) {
      std::printf("%s\n", bpclip::verify::format_line(r).c_str());
      std::fflush(stdout);
      failed += r.passed ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::printf("FAIL  acceptance driver  %s\n", e.what());
    return 1;
  }
  std::printf("%d check(s) failed\n", failed);
  return failed == 0 ? 0 : 1;
}
