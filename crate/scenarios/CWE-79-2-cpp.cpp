#include <cstdio>
#include <cstdlib>
#include <cstring>

/* print the HTTP response body for a search request */
void render_results(const char *search_term, int hits) {
    printf("<html><body>\n");

    //show the user what they searched for and how many results were found
