#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace voxa {

struct ParseError : std::runtime_error {
    int line, col;
    ParseError(int l, int c, const std::string& msg)
        : std::runtime_error("syntax error at " + std::to_string(l) + ":" + std::to_string(c) +
                             ": " + msg),
          line(l),
          col(c) {}
};

// program := stmt*
// stmt    := [ident "="] ident "(" args? ")"
// arg     := ident | number | string | "<MOD>"
struct Arg {
    enum class Kind { Var, Number, Str, Mod };
    Kind kind = Kind::Var;
    std::string text;     // identifier or string payload
    double number = 0.0;
    int mod_ordinal = -1;  // 0-based in textual order
};

struct Stmt {
    std::string target;  // empty for bare calls
    std::string func;
    std::vector<Arg> args;
    int line = 0, col = 0;
};

struct Program {
    std::vector<Stmt> stmts;
    int mod_count = 0;
    std::string source;
};

Program parse(const std::string& text);

}  // namespace voxa
