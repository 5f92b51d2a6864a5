#include <cstdio>

int main() {
    std::puts("fluxcal: CLI under construction");
    return 0;
}
