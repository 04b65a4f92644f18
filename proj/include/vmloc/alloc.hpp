#pragma once

// Training allocates and frees many same-sized tensors of a few hundred KB.
// glibc serves those with mmap/munmap by default, paying a page fault per
// touch; raising the thresholds keeps them on the heap. No effect elsewhere.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vmloc {

inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace vmloc
