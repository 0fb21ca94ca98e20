#include <math.h>
#include <stdio.h>
#include "gcvit.h"

int main(void) {
    double lr = 0.0;
    if (gcv_cosine_lr(50, 100, 0.0, 2e-4, &lr) != GCV_STATUS_OK || fabs(lr - 1e-4) > 1e-18) {
        return 1;
    }

    size_t labels[4] = {0, 0, 1, 1};
    size_t preds[4] = {0, 1, 1, 1};
    GcvReportSummary r;
    if (gcv_classification_report(labels, preds, 4, 2, &r) != GCV_STATUS_OK || r.accuracy != 0.75) {
        return 2;
    }

    GcvModel *model = NULL;
    if (gcv_model_load("/nonexistent.ckpt", &model) == GCV_STATUS_OK || model != NULL) {
        return 3;
    }
    char *msg = gcv_last_error_message();
    if (msg == NULL) {
        return 4;
    }
    gcv_string_free(msg);

    printf("ok %s\n", gcv_version());
    return 0;
}
