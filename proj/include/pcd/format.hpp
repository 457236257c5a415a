#pragma once

#include <string>

namespace pcd {

/// Shortest decimal text that parses back to the same double.
std::string format_exact(double v);

/// printf-style %.<digits>g.
std::string format_sig(double v, int digits = 12);

}  // namespace pcd
