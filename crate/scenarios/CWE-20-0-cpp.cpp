#include <cstdio>
#include <cstdlib>
#include <string>
using namespace std;

#define NUM_SLOTS 16

int slots[NUM_SLOTS];

int main(int argc, char *argv[]) {
    if (argc != 3) {
        printf("usage: %s <slot> <value>\n", argv[0]);
        return 1;
    }
    int slot = stoi(argv[1]);
    int value = stoi(argv[2]);

    //store the value in the requested slot
