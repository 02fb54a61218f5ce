#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dual.hpp"
#include "error.hpp"

namespace brokenray {

/// Parse failure inside an expression string; `column()` is 1-based.
class ExpressionError : public Error
{
  public:
    ExpressionError(std::size_t column, std::string const& msg)
        : Error(ErrorCode::ParseError, "column " + std::to_string(column) + ": " + msg),
          column_(column)
    {
    }
    std::size_t column() const noexcept { return column_; }

  private:
    std::size_t column_;
};

/// Closed-form scalar expression over a fixed list of named variables.
///
/// Grammar: numbers, variables, + - * / ^, unary minus, parentheses and the
/// functions sin, cos, exp, sqrt; `pi` is a constant. The parsed form is a
/// postfix program evaluated on any scalar type with the usual arithmetic,
/// so the same expression serves double and Dual evaluation.
class Expression
{
  public:
    static constexpr std::size_t max_stack = 64;

    Expression() : Expression(0.0) {}

    explicit Expression(double constant)
    {
        ops_.push_back({OpKind::Const, constant, 0});
        source_ = format_constant(constant);
        depth_ = 1;
    }

    /// Parse `text`; identifiers resolve against `variables` by position.
    static Expression parse(std::string_view text, std::vector<std::string> const& variables)
    {
        Parser p{text, variables, {}, 0};
        p.skip_ws();
        if (p.pos == text.size())
            throw ExpressionError(1, "empty expression");
        p.parse_expr();
        p.skip_ws();
        if (p.pos != text.size())
            throw ExpressionError(p.pos + 1, "unexpected character '" + std::string(1, text[p.pos]) + "'");
        Expression e;
        e.ops_ = std::move(p.ops);
        e.source_ = std::string(text);
        e.depth_ = stack_depth(e.ops_);
        if (e.depth_ > max_stack)
            throw ExpressionError(1, "expression nests too deeply");
        return e;
    }

    template <class T>
    T eval(std::span<T const> vars) const
    {
        std::array<T, max_stack> st{};
        std::size_t n = 0;
        for (auto const& op : ops_)
        {
            switch (op.kind)
            {
                case OpKind::Const: st[n++] = T(op.c); break;
                case OpKind::Var: st[n++] = vars[op.index]; break;
                case OpKind::Add: --n; st[n - 1] = st[n - 1] + st[n]; break;
                case OpKind::Sub: --n; st[n - 1] = st[n - 1] - st[n]; break;
                case OpKind::Mul: --n; st[n - 1] = st[n - 1] * st[n]; break;
                case OpKind::Div: --n; st[n - 1] = st[n - 1] / st[n]; break;
                case OpKind::Pow: --n; st[n - 1] = power(st[n - 1], st[n]); break;
                case OpKind::Neg: st[n - 1] = -st[n - 1]; break;
                case OpKind::Sin: { using std::sin; st[n - 1] = sin(st[n - 1]); break; }
                case OpKind::Cos: { using std::cos; st[n - 1] = cos(st[n - 1]); break; }
                case OpKind::Exp: { using std::exp; st[n - 1] = exp(st[n - 1]); break; }
                case OpKind::Sqrt: { using std::sqrt; st[n - 1] = sqrt(st[n - 1]); break; }
            }
        }
        return st[0];
    }

    template <class T>
    T operator()(std::span<T const> vars) const
    {
        return eval(vars);
    }

    std::string const& source() const noexcept { return source_; }

    bool is_constant() const noexcept { return ops_.size() == 1 && ops_[0].kind == OpKind::Const; }

    /// Highest variable index referenced, or -1 for a constant expression.
    int max_variable() const noexcept
    {
        int m = -1;
        for (auto const& op : ops_)
            if (op.kind == OpKind::Var && static_cast<int>(op.index) > m)
                m = static_cast<int>(op.index);
        return m;
    }

  private:
    enum class OpKind { Const, Var, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Exp, Sqrt };

    struct Op
    {
        OpKind kind;
        double c;
        std::size_t index;
    };

    template <class T>
    static T power(T a, T b)
    {
        // Small integer exponents by repeated multiplication: exact for
        // negative bases and cheaper for duals.
        double bv = value_of(b);
        if (bv == std::floor(bv) && std::abs(bv) <= 16.0 && deriv_of(b) == 0.0)
        {
            int e = static_cast<int>(bv);
            T r(1.0);
            T base = a;
            for (int i = 0; i < std::abs(e); ++i)
                r = r * base;
            if (e < 0)
                r = T(1.0) / r;
            return r;
        }
        using std::pow;
        return pow(a, b);
    }

    static std::size_t stack_depth(std::vector<Op> const& ops)
    {
        std::size_t n = 0, m = 0;
        for (auto const& op : ops)
        {
            switch (op.kind)
            {
                case OpKind::Const:
                case OpKind::Var: ++n; break;
                case OpKind::Add:
                case OpKind::Sub:
                case OpKind::Mul:
                case OpKind::Div:
                case OpKind::Pow: --n; break;
                default: break;
            }
            m = std::max(m, n);
        }
        return m;
    }

    static std::string format_constant(double c)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", c);
        return buf;
    }

    struct Parser
    {
        std::string_view text;
        std::vector<std::string> const& vars;
        std::vector<Op> ops;
        std::size_t pos;

        void skip_ws()
        {
            while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
                ++pos;
        }

        bool accept(char c)
        {
            skip_ws();
            if (pos < text.size() && text[pos] == c)
            {
                ++pos;
                return true;
            }
            return false;
        }

        void parse_expr()
        {
            parse_term();
            for (;;)
            {
                if (accept('+'))
                {
                    parse_term();
                    ops.push_back({OpKind::Add, 0, 0});
                }
                else if (accept('-'))
                {
                    parse_term();
                    ops.push_back({OpKind::Sub, 0, 0});
                }
                else
                    return;
            }
        }

        void parse_term()
        {
            parse_unary();
            for (;;)
            {
                if (accept('*'))
                {
                    parse_unary();
                    ops.push_back({OpKind::Mul, 0, 0});
                }
                else if (accept('/'))
                {
                    parse_unary();
                    ops.push_back({OpKind::Div, 0, 0});
                }
                else
                    return;
            }
        }

        void parse_unary()
        {
            if (accept('-'))
            {
                parse_unary();
                ops.push_back({OpKind::Neg, 0, 0});
                return;
            }
            if (accept('+'))
            {
                parse_unary();
                return;
            }
            parse_power();
        }

        void parse_power()
        {
            parse_primary();
            if (accept('^'))
            {
                parse_unary();
                ops.push_back({OpKind::Pow, 0, 0});
            }
        }

        void parse_primary()
        {
            skip_ws();
            if (pos >= text.size())
                throw ExpressionError(pos + 1, "unexpected end of expression");
            char c = text[pos];
            if (c == '(')
            {
                ++pos;
                parse_expr();
                if (!accept(')'))
                    throw ExpressionError(pos + 1, "expected ')'");
                return;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
            {
                std::string buf(text.substr(pos));
                char* end = nullptr;
                double v = std::strtod(buf.c_str(), &end);
                if (end == buf.c_str())
                    throw ExpressionError(pos + 1, "malformed number");
                pos += static_cast<std::size_t>(end - buf.c_str());
                ops.push_back({OpKind::Const, v, 0});
                return;
            }
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_')
            {
                std::size_t start = pos;
                while (pos < text.size()
                       && (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
                    ++pos;
                std::string name(text.substr(start, pos - start));
                skip_ws();
                if (pos < text.size() && text[pos] == '(')
                {
                    OpKind k;
                    if (name == "sin") k = OpKind::Sin;
                    else if (name == "cos") k = OpKind::Cos;
                    else if (name == "exp") k = OpKind::Exp;
                    else if (name == "sqrt") k = OpKind::Sqrt;
                    else throw ExpressionError(start + 1, "unknown function '" + name + "'");
                    ++pos;
                    parse_expr();
                    if (!accept(')'))
                        throw ExpressionError(pos + 1, "expected ')'");
                    ops.push_back({k, 0, 0});
                    return;
                }
                if (name == "pi")
                {
                    ops.push_back({OpKind::Const, std::numbers::pi, 0});
                    return;
                }
                for (std::size_t i = 0; i < vars.size(); ++i)
                {
                    if (vars[i] == name)
                    {
                        ops.push_back({OpKind::Var, 0, i});
                        return;
                    }
                }
                throw ExpressionError(start + 1, "unknown variable '" + name + "'");
            }
            throw ExpressionError(pos + 1, "unexpected character '" + std::string(1, c) + "'");
        }
    };

    std::vector<Op> ops_;
    std::string source_;
    std::size_t depth_ = 0;
};

}  // namespace brokenray
