#include <stdio.h>
#include <stdlib.h>
#include <string.h>

typedef struct node {
    int value;
    struct node *next;
} node;

//return the value stored in the last node of the list
int last_value(node *head) {
