#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fseg/densecrf.hpp"
#include "fseg/fcn.hpp"

namespace fseg {

// Flat run configuration shared by the train, infer, eval, and pipeline
// commands. One document drives a whole run: network architecture and
// schedule, CRF kernel weights and bandwidths, and the fold protocol.
// The variant string encodes net.fuzzy plus net.kind.
struct RunConfig {
  NetworkConfig net;
  CrfParams crf;
  bool crf_enabled = true;      // refine with mean field after the network
  std::string membership = "any";  // checkpoint assertion: any|sigmoid|gaussian
  int folds = 10;
  int fold = 0;                 // held-out fold index
  std::uint64_t fold_seed = 1;  // split permutation, independent of net.seed
  int jobs = 1;                 // inference worker threads
};

// Sets one key. Throws std::invalid_argument naming the key for unknown
// keys or malformed values, so typos fail instead of silently running
// defaults.
void apply_setting(RunConfig& rc, const std::string& key, const std::string& value);

// Applies `key = value` lines ('#' comments and blank lines allowed) on top
// of the given config. Errors carry file and line.
void load_config_file(RunConfig& rc, const std::string& path);

// Every recognized key as a `key = value` line in fixed order; written next
// to each checkpoint as the resolved-run snapshot and accepted back by
// load_config_file.
std::string config_document(const RunConfig& rc);

// One line per key with its default and meaning; embedded in --help.
std::string config_help();

std::string variant_name(const NetworkConfig& cfg);

// Full command-line front end. Returns the process exit code; everything a
// command reports goes to `out`, every failure is a single line on `err`.
// Streams are injectable so tests can run commands in-process.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fseg
