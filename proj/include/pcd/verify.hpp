#pragma once

// Executable invariant suite. Every entry draws seeded random instances,
// compares the library against an independent oracle or a proved inequality,
// and records the worst margin (allowed minus observed; negative means a
// violation). Rendered reports contain no timings, so a fixed seed yields a
// byte-identical report.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcd/common.hpp"

namespace pcd::verify {

enum class Suite : std::uint8_t { kFast, kFull };

std::string to_string(Suite s);
Suite suite_from_string(const std::string& s);

struct Entry {
  std::string name;       // module.property
  std::string reference;  // the statement being checked
  std::size_t instances = 0;
  bool pass = false;
  double worst_margin = 0.0;
  std::string note;       // first violation, empty when passing
  double seconds = 0.0;   // wall time; not rendered
};

struct Report {
  Suite suite = Suite::kFast;
  std::uint64_t seed = 0;
  std::vector<Entry> entries;

  bool pass() const;
  const Entry* find(std::string_view name) const;
};

struct Options {
  Suite suite = Suite::kFast;
  std::uint64_t seed = 0;
  // Entries whose name starts with one of these prefixes; all when empty.
  std::vector<std::string> only;
  // Stand-in for srvt_inverse in the roundtrip entry, for mutation checks.
  std::function<Vector(std::span<const double>)> srvt_inverse;
  std::function<void(const Entry&)> on_entry;
};

Report run(const Options& opts);

/// Entry names in run order.
std::vector<std::string> manifest();

/// FNV-1a over names, references and instance counts of both suites, as 16
/// hex digits.
std::string manifest_hash();

std::string render_text(const Report& report);
std::string render_json(const Report& report);

}  // namespace pcd::verify
