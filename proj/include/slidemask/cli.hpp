#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "slidemask/detection.hpp"
#include "slidemask/error.hpp"
#include "slidemask/metrics.hpp"

namespace slidemask {

/// Process exit status for each error class; 0 is success, 1 an unexpected failure.
int exit_code(ErrorKind kind);

/// Entry point of the `slidemask` tool. `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

/// "image_id,truth" rows, truth being landslide or non-landslide.
TruthMap read_truth_csv(const std::string& path);
std::string truth_csv(const TruthMap& truth);

/// Verdict documents (*.json) of a directory, ordered by file name.
std::vector<ImageVerdict> read_verdicts(const std::string& dir);

}  // namespace slidemask
