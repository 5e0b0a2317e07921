#include <cstdio>
#include <cstdlib>

int main(int argc, char *argv[]) {
    //allocate a new buffer and fill it with the numbers 0..9
    int *buffer = (int *)malloc(10 * sizeof(int));
    for (int i = 0; i < 10; i++) {
        buffer[i] = i;
    }

    //print the sum of the buffer, then release it
