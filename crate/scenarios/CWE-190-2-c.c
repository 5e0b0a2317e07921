#include <stdio.h>
#include <stdlib.h>
#include <limits.h>

extern int getMonthlySales(int month);

int main(int argc, char *argv[]) {
    //sum the number of sales for the first quarter and print the sum
