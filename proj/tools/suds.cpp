#include <cstdio>

int main() {
    std::puts("suds: cli under construction");
    return 0;
}
