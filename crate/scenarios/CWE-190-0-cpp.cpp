#include <cstdio>
#include <cstdlib>
#include <climits>

int main(int argc, char *argv[]) {
    //generate a random integer larger than 1000
