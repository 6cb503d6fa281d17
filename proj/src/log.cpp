#include "smarttree/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace smarttree::log {

namespace {
std::atomic<bool> g_verbose{false};
std::mutex g_mutex;
}  // namespace

void set_verbose(bool verbose) { g_verbose = verbose; }
bool verbose() { return g_verbose; }

void warn(std::string_view message) {
  std::lock_guard lock(g_mutex);
  std::cerr << "warning: " << message << '\n';
}

void info(std::string_view message) {
  if (!g_verbose) return;
  std::lock_guard lock(g_mutex);
  std::cerr << message << '\n';
}

}  // namespace smarttree::log
