#include <cstdio>
#include <cstdlib>
#include <cstring>

typedef struct {
    char name[32];
    int status;
} person;

int main(int argc, char *argv[]) {
    if (argc != 2) {
        printf("Need 1 argument\n");
        exit(1);
    }
    person *p = (person *)malloc(sizeof(person));
    p->status = 0;

    //copy the argument into the name field of the new person
