#pragma once

#include <string_view>

namespace smarttree::log {

// Diagnostics go to stderr only; stdout and output files carry data.
void set_verbose(bool verbose);
bool verbose();
void warn(std::string_view message);
void info(std::string_view message);  // printed only when verbose

}  // namespace smarttree::log
