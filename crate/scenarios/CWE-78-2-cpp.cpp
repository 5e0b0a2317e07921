#include <cstdio>
#include <cstdlib>
#include <cstring>

int ping_host(const char *host) {
    char cmd[256];

    //ping the host once and return the exit status of the ping command
