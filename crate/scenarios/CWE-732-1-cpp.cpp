#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <unistd.h>
#include <sys/stat.h>

int main(int argc, char *argv[]) {
    char *secret = "U2FsdGVkX1/R+WzJcxgvX/Iw==";

    //write the secret to a new file named secret.txt, then print its permissions
