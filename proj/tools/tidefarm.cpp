#include <cstdio>

int main() {
  std::fprintf(stderr, "error: cli: not wired up yet\n");
  return 1;
}
