#include <cstdio>
#include <cstdlib>
#include <cstring>

int main(int argc, char *argv[]) {
    char *message = "Hello";
    char buffer[256];

    //copy the message to the buffer
