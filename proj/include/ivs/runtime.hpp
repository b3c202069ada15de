#pragma once

namespace ivs {

/// Keeps large temporaries on the heap instead of fresh mmap pages; training
/// loops allocate multi-megabyte matrices every step. No-op outside glibc.
void tune_allocator();

}  // namespace ivs
