#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "cloudgate.h"

int main(int argc, char **argv) {
    if (argc != 2) return 2;
    CgModel *model = NULL;
    if (cg_model_open(argv[1], NULL, &model) != CG_STATUS_OK) {
        fprintf(stderr, "open: %s\n", cg_last_error_message());
        return 1;
    }
    size_t dim = cg_model_embed_dim(model);
    size_t res = cg_model_image_resolution(model);
    size_t n = 3 * res * res;
    float *composite = malloc(sizeof(float) * 3 * 10 * 10);
    for (size_t i = 0; i < 300; i++) composite[i] = (float)(i % 17) / 16.0f;
    float *pixels = malloc(sizeof(float) * n);
    float *emb = malloc(sizeof(float) * dim);
    if (cg_model_preprocess(model, composite, 10, 10, pixels, n) != CG_STATUS_OK ||
        cg_model_encode_image(model, pixels, n, emb, dim) != CG_STATUS_OK) {
        fprintf(stderr, "encode: %s\n", cg_last_error_message());
        return 1;
    }
    CgPrompts *prompts = NULL;
    CgVerdict v;
    if (cg_prompts_new(model, NULL, NULL, &prompts) != CG_STATUS_OK ||
        cg_classify(prompts, emb, dim, &v) != CG_STATUS_OK) {
        fprintf(stderr, "classify: %s\n", cg_last_error_message());
        return 1;
    }
    if (cg_classify(prompts, emb, dim - 1, &v) != CG_STATUS_INVALID_ARGUMENT) return 1;
    printf("%s %.6f\n", v.label == CG_LABEL_CLOUDY ? "cloudy" : "clear", v.confidence);
    cg_prompts_free(prompts);
    cg_model_free(model);
    free(composite);
    free(pixels);
    free(emb);
    return 0;
}
