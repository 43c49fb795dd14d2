/* Copyright 2026 The roadnoise Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// The `roadnoise` command line: synth, features, train, quantize, classify,
// gradcheck and bench subcommands behind one entry point.

#ifndef ROADNOISE_CLI_HPP_
#define ROADNOISE_CLI_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace roadnoise {

struct ConfigEntry {
  std::string key;  // as written, e.g. clips_per_class
  std::string value;
  std::size_t line = 0;
};

// `key=value` lines; blank lines and lines starting with '#' are skipped.
// Throws InvalidArgument naming the line on malformed input.
std::vector<ConfigEntry> parse_config(std::istream& in);
std::vector<ConfigEntry> parse_config_file(const std::filesystem::path& path);

// `args` excludes the program name. Returns 0 on success, 1 on usage and
// domain errors, 2 on I/O errors.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err);

}  // namespace roadnoise

#endif  // ROADNOISE_CLI_HPP_
