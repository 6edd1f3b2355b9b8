#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "protolog/program.hpp"
#include "protolog/term.hpp"

namespace protolog {

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, int line, int col)
      : std::runtime_error(msg + " at line " + std::to_string(line) + ", column " +
                           std::to_string(col)),
        line(line),
        col(col) {}
  int line;
  int col;
};

// Parses a full program source. Throws ParseError with position on bad input.
Program parse_program(const std::string& text);

// Parses a single goal (no trailing '.'). Named variables are returned in
// first-occurrence order. `#img("path")` literals become '$img'(path) terms;
// callers replace them with tensor handles before solving.
TermPtr parse_goal(const std::string& text,
                   std::vector<std::pair<std::string, uint64_t>>* vars = nullptr);

}  // namespace protolog
