#include <stdio.h>
#include <stdlib.h>

int getValueFromArray(int *array, int size, int index) {
    //return the value at the given index, or -1 if the index is out of bounds
