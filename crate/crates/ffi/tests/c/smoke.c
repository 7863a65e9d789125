#include <stdio.h>
#include "ldpo.h"

int main(void) {
    size_t a[] = {0, 0, 1, 1};
    size_t b[] = {1, 1, 0, 0};
    double p = 0.0;
    if (ldpo_purity(a, b, 4, &p) != LDPO_STATUS_OK || p != 1.0) return 1;
    if (ldpo_purity(NULL, b, 4, &p) != LDPO_STATUS_NULL_POINTER) return 2;
    if (ldpo_last_error_message()[0] == '\0') return 3;

    LdpoSession *s = NULL;
    if (ldpo_session_new("max_iterations = [", &s) != LDPO_STATUS_CONFIG) return 4;
    printf("ok\n");
    return 0;
}
