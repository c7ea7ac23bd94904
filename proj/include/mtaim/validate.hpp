#pragma once

#include "mtaim/types.hpp"

#include <string>
#include <vector>

namespace mtaim {

struct Violation {
  std::ptrdiff_t sample_index;  // -1 for dataset-level rules
  std::string rule;
  std::string detail;
};

using ValidationReport = std::vector<Violation>;

// Never throws; an empty report means every invariant holds.
ValidationReport validate_dataset(const Dataset& d);

}  // namespace mtaim
