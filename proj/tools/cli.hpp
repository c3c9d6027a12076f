#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mrri {

// Batch command-line entry point. Returns the process exit code: 0 on
// success, 2 on usage errors, 1 on module errors (structured JSON on err).
int cli_run(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace mrri
