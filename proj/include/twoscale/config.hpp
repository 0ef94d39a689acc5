#pragma once

#include <map>
#include <string>

#include "twoscale/harness.hpp"

namespace twoscale {

// Sectioned key = value run file:
//
//   [problem]    preset, T, bounds, points, initial_center, initial_width,
//                initial_amplitude, flow, substeps
//   [fields]     order<i>.<component> = <field form>, v_parallel
//   [expansion]  K, tau_points, checkpoints
//   [reference]  N_fast, memory_limit_gb
//   [sweep]      eps, norm, trace
//   [output]     directory, record_timings
//
// Every section must be present and unknown sections or keys are rejected.
// Required keys: problem.preset, problem.T, expansion.K, sweep.eps and at
// least one order0 field. '#' and ';' start comments.
struct RunConfig {
  SweepConfig sweep;
  std::string output_directory = "results";
  // Line of each "section.key", for messages about values.
  std::map<std::string, int> lines;
  std::string source;
};

// ConfigError messages read "<source>:<line>: <what>".
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
// IoError if the file cannot be read.
RunConfig load_run_config(const std::string& path);

// Parses "0.125", "1e-3" or "1/16".
double parse_number(const std::string& text);

}  // namespace twoscale
