#pragma once

// Tiny harness for the acceptance binaries: each criterion prints exactly one
// PASS/FAIL line; the process exits nonzero when anything failed.

#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

namespace acceptance {

struct Result {
  bool pass = false;
  std::string detail;
};

class Suite {
 public:
  void criterion(int num, const std::string& label, const std::function<Result()>& body) {
    Result r;
    try {
      r = body();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s  criterion %d: %s%s%s\n", r.pass ? "PASS" : "FAIL", num, label.c_str(),
                r.detail.empty() ? "" : " -- ", r.detail.c_str());
    std::fflush(stdout);
    if (!r.pass) failures_++;
  }

  int exit_code() const {
    std::printf("%s\n", failures_ == 0 ? "ALL CRITERIA PASSED"
                                       : (std::to_string(failures_) + " CRITERIA FAILED").c_str());
    return failures_ == 0 ? 0 : 1;
  }

 private:
  int failures_ = 0;
};

inline std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, x);
  return buf;
}

}  // namespace acceptance
