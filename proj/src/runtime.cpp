#include "ivs/runtime.hpp"

#include <cstdlib>  // defines __GLIBC__

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ivs {

void tune_allocator() {
#if defined(__GLIBC__)
  // Keep freed tape buffers in the heap instead of returning them to the kernel.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // the largest value glibc accepts
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace ivs
