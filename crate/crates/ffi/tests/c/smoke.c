#include <stdio.h>
#include <stdlib.h>
#include "conceptcf.h"

static int fail(const char *what, CcfStatus status) {
    const char *msg = ccf_last_error_message();
    fprintf(stderr, "%s failed with %d: %s\n", what, (int)status, msg ? msg : "(none)");
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: smoke MANIFEST IMAGE_ID\n");
        return 2;
    }
    CcfManifest *m = NULL;
    CcfClassifier *c = NULL;
    CcfProvider *p = NULL;
    char *json = NULL;
    size_t records = 0, dimension = 0;
    CcfStatus s;

    if ((s = ccf_manifest_load(argv[1], &m)) != CCF_STATUS_OK) return fail("load", s);
    if ((s = ccf_manifest_info(m, &records, &dimension)) != CCF_STATUS_OK) return fail("info", s);
    if ((s = ccf_classifier_train(m, 100, 1e-2, 64, 0, &c)) != CCF_STATUS_OK) return fail("train", s);
    if ((s = ccf_provider_synthetic(m, 7, &p)) != CCF_STATUS_OK) return fail("provider", s);
    if ((s = ccf_explain_image_json(m, c, p, argv[2], 3, 3, &json)) != CCF_STATUS_OK) return fail("explain", s);
    printf("%zu %zu\n%s\n", records, dimension, json);
    ccf_string_free(json);

    if (ccf_manifest_load(NULL, &m) != CCF_STATUS_NULL_POINTER) return 1;
    ccf_provider_free(p);
    ccf_classifier_free(c);
    ccf_manifest_free(m);
    return 0;
}
