#include "pfn/builders.hpp"
#include "pfn/describe.hpp"
#include "pfn/datagen.hpp"
#include "pfn/engine.hpp"
#include "pfn/io.hpp"
#include "pfn/kernels.hpp"
#include "pfn/matrix.hpp"
#include "pfn/network.hpp"
#include "pfn/rng.hpp"

#include <gtest/gtest.h>

TEST(Headers, Compile) { SUCCEED(); }
