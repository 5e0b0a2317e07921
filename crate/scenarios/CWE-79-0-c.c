#include <stdio.h>
#include <stdlib.h>
#include <string.h>

/* CGI program: greet the user named in the query string */
int main(void) {
    char *query = getenv("QUERY_STRING");
    printf("Content-Type: text/html\r\n\r\n");
    if (query == NULL || strncmp(query, "name=", 5) != 0) {
        printf("<p>No name given</p>\n");
        return 0;
    }
    char *name = query + 5;

    //write a greeting containing the name to the page
