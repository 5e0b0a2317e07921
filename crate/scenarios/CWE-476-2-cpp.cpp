#include <cstdio>
#include <cstdlib>
#include <cstring>

int main(int argc, char *argv[]) {
    //allocate a buffer of 1024 bytes
    char *buf = (char *)malloc(1024);

    //read in up to 100 characters from stdin into the buffer
