#include <cstdio>
#include <cstdlib>
#include <climits>
#include <string>
using namespace std;

int main(int argc, char *argv[]) {
    int value = 0;

    //read in the value from the command line
    if (argc > 1) {
        value = stoi(argv[1]);
    }

    //add 100000000 to "value" and print the result
