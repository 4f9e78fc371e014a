#include <cstdio>

int main() {
  std::puts("lumifield: placeholder");
  return 0;
}
