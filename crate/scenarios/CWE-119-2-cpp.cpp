#include <cstdio>
#include <cstdlib>
#include <cstring>

int main(int argc, char *argv[]) {
    //print every command line argument on its own line, prefixed with its index
    char line[64];
