#include <cstdio>
#include <cstdlib>
#include <cstring>

int main(int argc, char *argv[]) {
    char *vehicles[] = {"boat", "car", "truck", "train"};

    //read the index of the vehicle from the command line and print that vehicle
