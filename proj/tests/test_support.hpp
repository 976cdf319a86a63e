#pragma once

#include <catch2/catch_amalgamated.hpp>

#include "wavesim/error.hpp"

#include <fstream>
#include <sstream>
#include <string>

#define CHECK_ERRC(expr, errc)                                                                  \
    CHECK_THROWS_MATCHES(expr, ::wavesim::Error,                                                \
                         ::Catch::Matchers::Predicate<::wavesim::Error>(                        \
                             [](const ::wavesim::Error& e) { return e.code() == (errc); },      \
                             "error code " + std::string(::wavesim::to_string(errc))))

namespace wavesim::test {

inline std::string read_deck(const std::string& name) {
    std::ifstream in(std::string(WAVESIM_DECK_DIR) + "/" + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace wavesim::test
