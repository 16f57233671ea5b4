#include "ganorcon/interp.hpp"

// Header-only; this TU only anchors the header in the build.
