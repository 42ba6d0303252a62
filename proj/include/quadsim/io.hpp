#ifndef QUADSIM_IO_HPP_
#define QUADSIM_IO_HPP_

#include <string>

namespace quadsim {

// Writes to <path>.tmp and renames over <path>, so readers never observe a
// partially written file.
void WriteFileAtomic(const std::string& path, const std::string& contents);

std::string ReadFile(const std::string& path);

}  // namespace quadsim

#endif  // QUADSIM_IO_HPP_
