#include "voxa/dsl.hpp"

#include <cctype>

namespace voxa {

namespace {

enum class Tok { Ident, Number, Str, Mod, LParen, RParen, Comma, Equals, End };

struct Lexeme {
    Tok tok;
    std::string text;
    double number = 0.0;
    int line = 1, col = 1;
};

class Lexer {
public:
    explicit Lexer(const std::string& s) : s_(s) {}

    Lexeme next() {
        skip_ws();
        Lexeme lx;
        lx.line = line_;
        lx.col = col_;
        if (i_ >= s_.size()) {
            lx.tok = Tok::End;
            return lx;
        }
        const char c = s_[i_];
        if (c == '(') return simple(lx, Tok::LParen);
        if (c == ')') return simple(lx, Tok::RParen);
        if (c == ',') return simple(lx, Tok::Comma);
        if (c == '=') return simple(lx, Tok::Equals);
        if (c == '<') {
            if (s_.compare(i_, 5, "<MOD>") == 0) {
                advance(5);
                lx.tok = Tok::Mod;
                return lx;
            }
            throw ParseError(line_, col_, "unexpected '<'");
        }
        if (c == '"') {
            advance(1);
            std::string payload;
            while (i_ < s_.size() && s_[i_] != '"') {
                if (s_[i_] == '\n') throw ParseError(line_, col_, "newline inside string literal");
                payload += s_[i_];
                advance(1);
            }
            if (i_ >= s_.size()) throw ParseError(lx.line, lx.col, "unterminated string literal");
            advance(1);
            lx.tok = Tok::Str;
            lx.text = payload;
            return lx;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            std::string num;
            while (i_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[i_])) || s_[i_] == '.')) {
                num += s_[i_];
                advance(1);
            }
            lx.tok = Tok::Number;
            lx.text = num;
            try {
                std::size_t used = 0;
                lx.number = std::stod(num, &used);
                if (used != num.size()) throw std::invalid_argument(num);
            } catch (const std::exception&) {
                throw ParseError(lx.line, lx.col, "malformed number '" + num + "'");
            }
            return lx;
        }
        if (c >= 'a' && c <= 'z') {
            std::string id;
            while (i_ < s_.size() &&
                   ((s_[i_] >= 'a' && s_[i_] <= 'z') ||
                    std::isdigit(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) {
                id += s_[i_];
                advance(1);
            }
            lx.tok = Tok::Ident;
            lx.text = id;
            return lx;
        }
        throw ParseError(line_, col_, std::string("unexpected character '") + c + "'");
    }

private:
    Lexeme simple(Lexeme lx, Tok t) {
        advance(1);
        lx.tok = t;
        return lx;
    }
    void skip_ws() {
        while (i_ < s_.size() &&
               (s_[i_] == ' ' || s_[i_] == '\t' || s_[i_] == '\r' || s_[i_] == '\n'))
            advance(1);
    }
    void advance(std::size_t n) {
        for (std::size_t k = 0; k < n && i_ < s_.size(); ++k, ++i_) {
            if (s_[i_] == '\n') {
                ++line_;
                col_ = 1;
            } else {
                ++col_;
            }
        }
    }
    const std::string& s_;
    std::size_t i_ = 0;
    int line_ = 1, col_ = 1;
};

}  // namespace

Program parse(const std::string& text) {
    Lexer lex(text);
    Program prog;
    prog.source = text;

    Lexeme lx = lex.next();
    while (lx.tok != Tok::End) {
        if (lx.tok != Tok::Ident)
            throw ParseError(lx.line, lx.col, "expected a statement");
        Stmt stmt;
        stmt.line = lx.line;
        stmt.col = lx.col;

        Lexeme after = lex.next();
        if (after.tok == Tok::Equals) {
            stmt.target = lx.text;
            Lexeme fn = lex.next();
            if (fn.tok != Tok::Ident)
                throw ParseError(fn.line, fn.col, "expected a function name after '='");
            stmt.func = fn.text;
            after = lex.next();
        } else {
            stmt.func = lx.text;
        }
        if (after.tok != Tok::LParen)
            throw ParseError(after.line, after.col, "expected '(' after function name");

        Lexeme a = lex.next();
        if (a.tok != Tok::RParen) {
            while (true) {
                Arg arg;
                switch (a.tok) {
                    case Tok::Ident:
                        arg.kind = Arg::Kind::Var;
                        arg.text = a.text;
                        break;
                    case Tok::Number:
                        arg.kind = Arg::Kind::Number;
                        arg.number = a.number;
                        arg.text = a.text;
                        break;
                    case Tok::Str:
                        arg.kind = Arg::Kind::Str;
                        arg.text = a.text;
                        break;
                    case Tok::Mod:
                        arg.kind = Arg::Kind::Mod;
                        arg.mod_ordinal = prog.mod_count++;
                        break;
                    case Tok::End:
                        throw ParseError(a.line, a.col, "unclosed '(' in call");
                    default:
                        throw ParseError(a.line, a.col, "expected an argument");
                }
                stmt.args.push_back(arg);
                Lexeme sep = lex.next();
                if (sep.tok == Tok::RParen) break;
                if (sep.tok == Tok::End)
                    throw ParseError(sep.line, sep.col, "unclosed '(' in call");
                if (sep.tok != Tok::Comma)
                    throw ParseError(sep.line, sep.col, "expected ',' or ')'");
                a = lex.next();
            }
        }
        prog.stmts.push_back(std::move(stmt));
        lx = lex.next();
    }
    return prog;
}

}  // namespace voxa
