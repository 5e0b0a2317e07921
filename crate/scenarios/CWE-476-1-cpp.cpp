#include <cstdio>
#include <cstdlib>
#include <cstring>

typedef struct node {
    int value;
    struct node *next;
} node;

//return the value stored in the last node of the list
int last_value(node *head) {
