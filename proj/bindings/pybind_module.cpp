#include <pybind11/pybind11.h>

namespace py = pybind11;

PYBIND11_MODULE(_mvseg, m) { m.doc() = "multi-view segmentation and pseudo-labeling toolkit"; }
