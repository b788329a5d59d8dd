#pragma once

namespace lscm {

// Keeps large freed blocks on the heap instead of returning them to the OS.
// The training loop reallocates the same multi-megabyte matrices every epoch,
// and with glibc defaults each one becomes a fresh mmap plus page faults.
void tune_allocator();

}  // namespace lscm
