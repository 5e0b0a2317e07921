#include <cstdio>
#include <cstdlib>

#define IDS_ARRAY_SIZE 10

int ids[IDS_ARRAY_SIZE];

int getIdFromArray(int index) {
    //given the array of ids, return the value at the given index and -1 if the index is out of bounds
