#pragma once

#include "mtaim/types.hpp"

#include <filesystem>
#include <iosfwd>

namespace mtaim {

// Columnar dataset file: `subject_id,movement,repetition,t_index,mt1..mt6[,kin1..kin6]`,
// one row per time step, rows sorted by (subject, movement, repetition, t_index).
// Leading `#` lines carry metadata (schema version, seed, dt, flags) and are
// ignored by plain CSV readers that skip comments.
void write_dataset(std::ostream& out, const Dataset& d);
void write_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::filesystem::path& path);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace mtaim
