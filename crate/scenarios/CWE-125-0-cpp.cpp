#include <cstdio>
#include <cstdlib>

#define VEHICLE_COUNT 5

int main(int argc, char *argv[]) {
    char *vehicles[VEHICLE_COUNT] = {"car", "bus", "van", "truck", "bike"};
    int index;

    //prompt the user for the index of a vehicle and print that vehicle
