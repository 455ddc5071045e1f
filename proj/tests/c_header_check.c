#include "rfr/rfr.h"

#include <stdio.h>

int main(void) {
  const double x[] = {0.0, 1.0, 2.0, 3.0};
  const int y[] = {0, 1, 1, 0};
  const int a[] = {0, 0, 1, 1};
  rfr_dataset* data = NULL;
  size_t rows = 0;
  size_t cols = 0;
  if (rfr_dataset_from_arrays(x, y, a, 4, 1, &data) != RFR_OK) {
    fprintf(stderr, "%s\n", rfr_last_error());
    return 1;
  }
  rfr_dataset_shape(data, &rows, &cols);
  rfr_dataset_free(data);
  if (rows != 4 || cols != 1) return 1;
  if (rfr_dataset_shape(NULL, &rows, &cols) != RFR_ERR_NULL_ARGUMENT) return 1;
  printf("c header ok\n");
  return 0;
}
