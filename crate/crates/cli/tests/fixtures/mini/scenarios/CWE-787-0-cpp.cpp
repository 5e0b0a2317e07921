#include <cstdio>
#include <cstdlib>
#include <cstring>

int main(int argc, char *argv[]) {
    // copy the first argument into a fixed-size local buffer
    char buffer[32];
