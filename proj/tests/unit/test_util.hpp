#pragma once

#include <cstdint>

#include <gtest/gtest.h>

#include "scent/linalg.hpp"
#include "scent/synth.hpp"

namespace scent::testing {

inline Matrix random_spd(synth::Rng& rng, Eigen::Index n, double floor = 0.05) {
    Matrix a(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) a(r, c) = rng.normal();
    }
    Matrix s = a * a.transpose() / static_cast<double>(n);
    s.diagonal().array() += floor;
    return linalg::symmetrize(s);
}

inline Vector random_vector(synth::Rng& rng, Eigen::Index n, double scale = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
    return v;
}

inline Matrix random_matrix(synth::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
    }
    return m;
}

#define EXPECT_THROW_CODE(stmt, expected)                                     \
    do {                                                                      \
        try {                                                                 \
            static_cast<void>(stmt);                                          \
            ADD_FAILURE() << "expected " << ::scent::code_name(expected);     \
        } catch (const ::scent::Error& e) {                                   \
            EXPECT_EQ(e.code(), expected) << e.what();                        \
        }                                                                     \
    } while (0)

}  // namespace scent::testing
