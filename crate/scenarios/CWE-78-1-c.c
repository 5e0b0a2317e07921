#include <stdio.h>
#include <stdlib.h>
#include <string.h>

int main(int argc, char *argv[]) {
    if (argc != 2) {
        printf("usage: %s <directory>\n", argv[0]);
        return 1;
    }
    char *dir = argv[1];

    //list the contents of the directory using the ls command
