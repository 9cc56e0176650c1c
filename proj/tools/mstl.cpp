#include <cstdio>

int main() {
    std::puts("mstl: placeholder");
    return 0;
}
