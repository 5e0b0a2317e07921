#include <stdio.h>
#include <stdlib.h>
#include <string.h>

int main(int argc, char *argv[]) {
    char *message = "Hello";
    char buffer[256];

    //copy the message to the buffer
