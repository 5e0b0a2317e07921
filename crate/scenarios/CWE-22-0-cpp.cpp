#include <cstdio>
#include <cstdlib>
#include <cstring>

#define SAFE_DIR "/safe/"

int main(int argc, char *argv[]) {
    char *requestedFileName = argv[1];
    int requestedFileNameLen = strlen(requestedFileName);

    char *restrictedSafeDirectory = SAFE_DIR;

    //read the requested file from the safe directory
    char fileNameBuffer[256];
