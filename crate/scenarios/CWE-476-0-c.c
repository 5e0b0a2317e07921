#include <stdio.h>
#include <stdlib.h>

typedef struct {
    char *name;
    int status;
} person;

int main(int argc, char *argv[]) {
    //allocate a new person and set status to 0
