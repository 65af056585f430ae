#include <malloc.h>

#include "bimamba/cli.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step; keep
  // them in the heap instead of returning them to the OS each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return bimamba::cli::run(argc, argv);
}
