#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#define FILENAME "data.csv"

int main(int argc, char *argv[]) {
    //read the file into a freshly allocated buffer
    char *buffer = (char *)malloc(1024);
    FILE *fp = fopen(FILENAME, "r");
    if (fp == NULL) {
        free(buffer);
        return 1;
    }
    size_t n = fread(buffer, 1, 1023, fp);
    buffer[n] = '\0';
    fclose(fp);

    //count the number of lines, free the buffer and print the count
