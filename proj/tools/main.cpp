#include <cstdio>

int main() {
  std::puts("sspsolve: command-line interface not wired up yet");
  return 2;
}
