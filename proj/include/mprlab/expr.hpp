#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mprlab/errors.hpp"
#include "mprlab/io.hpp"
#include "mprlab/poly.hpp"

// Expression trees over plant state x1..xn, the single control u, and
// exosystem state w1..wk. Everything the solvers need from a model goes
// through this type: numeric evaluation, Taylor jets at the origin,
// symbolic derivatives, and substitution (which is how output chains and
// Lie-series discretizations are built).

namespace mprlab {

enum class VarClass { x, u, w };

struct Dims {
    int n = 0; // plant states
    int k = 0; // exosystem states; m = p = 1 throughout
};

struct ExprSubstitution; // variable replacement map, defined after Expr

class Expr {
public:
    enum class Kind { constant, variable, neg, sin, cos, exp, add, sub, mul, div, pow };

    struct Node {
        Kind kind;
        double value = 0.0;       // constant
        VarClass var_class{};     // variable
        int index = 0;            // variable (0-based within its class)
        int exponent = 0;         // pow
        std::shared_ptr<const Node> a, b;
    };

    Expr() : node_(constant(0.0).node_) {}

    // --- factories (fold constants and drop additive/multiplicative units) ---

    static Expr constant(double v) {
        auto n = std::make_shared<Node>();
        n->kind = Kind::constant;
        n->value = v;
        return Expr(std::move(n));
    }

    static Expr variable(VarClass c, int index) {
        if (index < 0) throw StructuralError("dsl: negative variable index");
        auto n = std::make_shared<Node>();
        n->kind = Kind::variable;
        n->var_class = c;
        n->index = index;
        return Expr(std::move(n));
    }

    friend Expr operator+(const Expr& a, const Expr& b) {
        if (a.is_constant() && b.is_constant()) return constant(a.node_->value + b.node_->value);
        if (a.is_constant(0.0)) return b;
        if (b.is_constant(0.0)) return a;
        return binary(Kind::add, a, b);
    }

    friend Expr operator-(const Expr& a, const Expr& b) {
        if (a.is_constant() && b.is_constant()) return constant(a.node_->value - b.node_->value);
        if (b.is_constant(0.0)) return a;
        if (a.is_constant(0.0)) return -b;
        return binary(Kind::sub, a, b);
    }

    friend Expr operator*(const Expr& a, const Expr& b) {
        if (a.is_constant() && b.is_constant()) return constant(a.node_->value * b.node_->value);
        if (a.is_constant(0.0) || b.is_constant(0.0)) return constant(0.0);
        if (a.is_constant(1.0)) return b;
        if (b.is_constant(1.0)) return a;
        return binary(Kind::mul, a, b);
    }

    friend Expr operator/(const Expr& a, const Expr& b) {
        if (b.is_constant(1.0)) return a;
        if (a.is_constant() && b.is_constant() && b.node_->value != 0.0)
            return constant(a.node_->value / b.node_->value);
        if (a.is_constant(0.0) && !b.is_constant(0.0)) return constant(0.0);
        return binary(Kind::div, a, b);
    }

    Expr operator-() const {
        if (is_constant()) return constant(-node_->value);
        if (node_->kind == Kind::neg) return Expr(node_->a);
        auto n = std::make_shared<Node>();
        n->kind = Kind::neg;
        n->a = node_;
        return Expr(std::move(n));
    }

    static Expr sin(const Expr& a) {
        if (a.is_constant()) return constant(std::sin(a.node_->value));
        return unary(Kind::sin, a);
    }

    static Expr cos(const Expr& a) {
        if (a.is_constant()) return constant(std::cos(a.node_->value));
        return unary(Kind::cos, a);
    }

    static Expr exp(const Expr& a) {
        if (a.is_constant()) return constant(std::exp(a.node_->value));
        return unary(Kind::exp, a);
    }

    static Expr pow(const Expr& a, int e) {
        if (e < 0) throw StructuralError("dsl: integer power exponents must be >= 0");
        if (e == 0) return constant(1.0);
        if (e == 1) return a;
        if (a.is_constant()) return constant(std::pow(a.node_->value, e));
        auto n = std::make_shared<Node>();
        n->kind = Kind::pow;
        n->exponent = e;
        n->a = a.node_;
        return Expr(std::move(n));
    }

    // --- inspection ---

    Kind kind() const { return node_->kind; }
    const Node& node() const { return *node_; }

    bool is_constant() const { return node_->kind == Kind::constant; }
    bool is_constant(double v) const { return is_constant() && node_->value == v; }

    bool operator==(const Expr& o) const { return equal(node_.get(), o.node_.get()); }

    bool depends_on(VarClass c) const { return depends_on_impl(node_.get(), c); }

    // --- numeric evaluation ---

    double eval(std::span<const double> x, double u, std::span<const double> w) const {
        return eval_impl(node_.get(), x, u, w);
    }

    double eval(const std::vector<double>& x, double u, const std::vector<double>& w) const {
        return eval(std::span<const double>(x), u, std::span<const double>(w));
    }

    // --- Taylor jet at the origin ---
    //
    // The AST is evaluated in truncated-polynomial arithmetic. sin/cos/exp
    // expand their Maclaurin series (shifted when the argument has a
    // nonzero constant term); division requires a nonzero denominator
    // constant and uses the geometric series.

    // layout of the polynomial variable space: maps (class, index) to a
    // poly variable slot, or -1 if the class is absent from the space
    struct JetLayout {
        int arity = 0;
        int x_offset = -1; // slot of x1, consecutive
        int u_offset = -1;
        int w_offset = -1;

        // x1..xn, u, w1..wk
        static JetLayout xuw(const Dims& d) { return {d.n + 1 + d.k, 0, d.n, d.n + 1}; }
        // w1..wk only (exosystem maps)
        static JetLayout w_only(const Dims& d) { return {d.k, -1, -1, 0}; }
    };

    TruncatedPoly jet(const JetLayout& layout, int degree_cap) const {
        return jet_impl(node_.get(), layout, degree_cap);
    }

    // --- symbolic derivative (constant folding only) ---

    Expr derivative(VarClass c, int index) const { return derivative_impl(node_.get(), c, index); }

    // --- substitution ---

    using Substitution = ExprSubstitution;

    // replaces variable leaves; entries left disengaged keep the variable
    Expr substitute(const Substitution& s) const;

    std::string to_string() const { return print(node_.get(), 0); }

private:
    explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

    static Expr binary(Kind k, const Expr& a, const Expr& b) {
        auto n = std::make_shared<Node>();
        n->kind = k;
        n->a = a.node_;
        n->b = b.node_;
        return Expr(std::move(n));
    }

    static Expr unary(Kind k, const Expr& a) {
        auto n = std::make_shared<Node>();
        n->kind = k;
        n->a = a.node_;
        return Expr(std::move(n));
    }

    static bool equal(const Node* a, const Node* b) {
        if (a == b) return true;
        if (a->kind != b->kind) return false;
        switch (a->kind) {
            case Kind::constant: return a->value == b->value;
            case Kind::variable: return a->var_class == b->var_class && a->index == b->index;
            case Kind::pow: return a->exponent == b->exponent && equal(a->a.get(), b->a.get());
            case Kind::neg:
            case Kind::sin:
            case Kind::cos:
            case Kind::exp: return equal(a->a.get(), b->a.get());
            default: return equal(a->a.get(), b->a.get()) && equal(a->b.get(), b->b.get());
        }
    }

    static bool depends_on_impl(const Node* n, VarClass c) {
        switch (n->kind) {
            case Kind::constant: return false;
            case Kind::variable: return n->var_class == c;
            case Kind::neg:
            case Kind::sin:
            case Kind::cos:
            case Kind::exp:
            case Kind::pow: return depends_on_impl(n->a.get(), c);
            default:
                return depends_on_impl(n->a.get(), c) || depends_on_impl(n->b.get(), c);
        }
    }

    static double eval_impl(const Node* n, std::span<const double> x, double u,
                            std::span<const double> w) {
        switch (n->kind) {
            case Kind::constant: return n->value;
            case Kind::variable:
                switch (n->var_class) {
                    case VarClass::x:
                        if (n->index >= static_cast<int>(x.size()))
                            throw StructuralError("dsl: x vector too short for expression");
                        return x[n->index];
                    case VarClass::u: return u;
                    case VarClass::w:
                        if (n->index >= static_cast<int>(w.size()))
                            throw StructuralError("dsl: w vector too short for expression");
                        return w[n->index];
                }
                return 0.0;
            case Kind::neg: return -eval_impl(n->a.get(), x, u, w);
            case Kind::sin: return std::sin(eval_impl(n->a.get(), x, u, w));
            case Kind::cos: return std::cos(eval_impl(n->a.get(), x, u, w));
            case Kind::exp: return std::exp(eval_impl(n->a.get(), x, u, w));
            case Kind::add: return eval_impl(n->a.get(), x, u, w) + eval_impl(n->b.get(), x, u, w);
            case Kind::sub: return eval_impl(n->a.get(), x, u, w) - eval_impl(n->b.get(), x, u, w);
            case Kind::mul: return eval_impl(n->a.get(), x, u, w) * eval_impl(n->b.get(), x, u, w);
            case Kind::div: {
                const double denom = eval_impl(n->b.get(), x, u, w);
                if (denom == 0.0) throw EvalError("dsl: division by zero");
                return eval_impl(n->a.get(), x, u, w) / denom;
            }
            case Kind::pow: {
                const double base = eval_impl(n->a.get(), x, u, w);
                double r = 1.0;
                for (int i = 0; i < n->exponent; ++i) r *= base;
                return r;
            }
        }
        return 0.0;
    }

    // apply the analytic series sum_j coeffs(j) * t^j to a zero-constant jet t
    template <typename CoeffFn>
    static TruncatedPoly apply_series(const TruncatedPoly& t, int cap, CoeffFn&& coeffs) {
        TruncatedPoly result = TruncatedPoly::constant(t.arity(), cap, coeffs(0));
        TruncatedPoly tpow = TruncatedPoly::constant(t.arity(), cap, 1.0);
        for (int j = 1; j <= cap; ++j) {
            tpow = tpow * t;
            if (tpow.is_zero()) break;
            result = result + tpow * coeffs(j);
        }
        return result;
    }

    static TruncatedPoly jet_impl(const Node* n, const JetLayout& layout, int cap) {
        const int arity = layout.arity;
        switch (n->kind) {
            case Kind::constant: return TruncatedPoly::constant(arity, cap, n->value);
            case Kind::variable: {
                int slot = -1;
                switch (n->var_class) {
                    case VarClass::x: slot = layout.x_offset < 0 ? -1 : layout.x_offset + n->index; break;
                    case VarClass::u: slot = layout.u_offset; break;
                    case VarClass::w: slot = layout.w_offset < 0 ? -1 : layout.w_offset + n->index; break;
                }
                if (slot < 0) throw StructuralError("dsl: variable class not present in jet layout");
                return TruncatedPoly::variable(arity, cap, slot);
            }
            case Kind::neg: return -jet_impl(n->a.get(), layout, cap);
            case Kind::add: return jet_impl(n->a.get(), layout, cap) + jet_impl(n->b.get(), layout, cap);
            case Kind::sub: return jet_impl(n->a.get(), layout, cap) - jet_impl(n->b.get(), layout, cap);
            case Kind::mul: return jet_impl(n->a.get(), layout, cap) * jet_impl(n->b.get(), layout, cap);
            case Kind::pow: return jet_impl(n->a.get(), layout, cap).pow(n->exponent);
            case Kind::sin:
            case Kind::cos: {
                TruncatedPoly s = jet_impl(n->a.get(), layout, cap);
                const double c0 = s.constant_term();
                const TruncatedPoly t = s - TruncatedPoly::constant(arity, cap, c0);
                // derivative cycle sin -> cos -> -sin -> -cos, shifted to c0
                const double base[4] = {std::sin(c0), std::cos(c0), -std::sin(c0), -std::cos(c0)};
                const int phase = n->kind == Kind::sin ? 0 : 1;
                double fact = 1.0;
                return apply_series(t, cap, [&](int j) {
                    if (j > 0) fact *= j;
                    return base[(j + phase) % 4] / fact;
                });
            }
            case Kind::exp: {
                TruncatedPoly s = jet_impl(n->a.get(), layout, cap);
                const double c0 = s.constant_term();
                const TruncatedPoly t = s - TruncatedPoly::constant(arity, cap, c0);
                const double e0 = std::exp(c0);
                double fact = 1.0;
                return apply_series(t, cap, [&](int j) {
                    if (j > 0) fact *= j;
                    return e0 / fact;
                });
            }
            case Kind::div: {
                TruncatedPoly num = jet_impl(n->a.get(), layout, cap);
                TruncatedPoly den = jet_impl(n->b.get(), layout, cap);
                const double b0 = den.constant_term();
                if (b0 == 0.0)
                    throw SingularJetError("dsl: division by a series with zero constant term at the origin");
                const TruncatedPoly t = den - TruncatedPoly::constant(arity, cap, b0);
                double coef = 1.0 / b0;
                TruncatedPoly recip = apply_series(t, cap, [&](int j) {
                    if (j > 0) coef *= -1.0 / b0;
                    return coef;
                });
                return num * recip;
            }
        }
        return TruncatedPoly::zero(arity, cap);
    }

    static Expr derivative_impl(const Node* n, VarClass c, int index) {
        switch (n->kind) {
            case Kind::constant: return constant(0.0);
            case Kind::variable:
                return constant(n->var_class == c && n->index == index ? 1.0 : 0.0);
            case Kind::neg: return -derivative_impl(n->a.get(), c, index);
            case Kind::sin: return cos(Expr(n->a)) * derivative_impl(n->a.get(), c, index);
            case Kind::cos: return -(sin(Expr(n->a)) * derivative_impl(n->a.get(), c, index));
            case Kind::exp: return exp(Expr(n->a)) * derivative_impl(n->a.get(), c, index);
            case Kind::add:
                return derivative_impl(n->a.get(), c, index) + derivative_impl(n->b.get(), c, index);
            case Kind::sub:
                return derivative_impl(n->a.get(), c, index) - derivative_impl(n->b.get(), c, index);
            case Kind::mul:
                return derivative_impl(n->a.get(), c, index) * Expr(n->b) +
                       Expr(n->a) * derivative_impl(n->b.get(), c, index);
            case Kind::div:
                return (derivative_impl(n->a.get(), c, index) * Expr(n->b) -
                        Expr(n->a) * derivative_impl(n->b.get(), c, index)) /
                       (Expr(n->b) * Expr(n->b));
            case Kind::pow:
                return constant(n->exponent) * pow(Expr(n->a), n->exponent - 1) *
                       derivative_impl(n->a.get(), c, index);
        }
        return constant(0.0);
    }

    static Expr substitute_impl(const Node* n, const Substitution& s);

    // precedence levels: 0 add/sub, 1 mul/div, 2 unary minus, 3 pow, 4 atom
    static std::string print(const Node* n, int parent_prec) {
        std::string s;
        int prec = 4;
        switch (n->kind) {
            case Kind::constant: {
                s = format_double(n->value);
                if (n->value < 0.0) prec = 2;
                break;
            }
            case Kind::variable:
                switch (n->var_class) {
                    case VarClass::x: s = "x" + std::to_string(n->index + 1); break;
                    case VarClass::u: s = "u"; break;
                    case VarClass::w: s = "w" + std::to_string(n->index + 1); break;
                }
                break;
            case Kind::neg:
                prec = 2;
                s = "-" + print(n->a.get(), 2);
                break;
            case Kind::sin: s = "sin(" + print(n->a.get(), 0) + ")"; break;
            case Kind::cos: s = "cos(" + print(n->a.get(), 0) + ")"; break;
            case Kind::exp: s = "exp(" + print(n->a.get(), 0) + ")"; break;
            case Kind::add:
                prec = 0;
                s = print(n->a.get(), 0) + " + " + print(n->b.get(), 1);
                break;
            case Kind::sub:
                prec = 0;
                s = print(n->a.get(), 0) + " - " + print(n->b.get(), 1);
                break;
            case Kind::mul:
                prec = 1;
                s = print(n->a.get(), 1) + " * " + print(n->b.get(), 2);
                break;
            case Kind::div:
                prec = 1;
                s = print(n->a.get(), 1) + " / " + print(n->b.get(), 2);
                break;
            case Kind::pow:
                prec = 3;
                s = print(n->a.get(), 4) + "^" + std::to_string(n->exponent);
                break;
        }
        if (prec < parent_prec) return "(" + s + ")";
        return s;
    }

    std::shared_ptr<const Node> node_;
};

// entries left disengaged keep the variable
struct ExprSubstitution {
    std::vector<std::optional<Expr>> x;
    std::optional<Expr> u;
    std::vector<std::optional<Expr>> w;
};

inline Expr Expr::substitute(const Substitution& s) const {
    return substitute_impl(node_.get(), s);
}

inline Expr Expr::substitute_impl(const Node* n, const Substitution& s) {
    switch (n->kind) {
        case Kind::constant: return constant(n->value);
        case Kind::variable: {
            const std::optional<Expr>* slot = nullptr;
            switch (n->var_class) {
                case VarClass::x:
                    if (n->index < static_cast<int>(s.x.size())) slot = &s.x[n->index];
                    break;
                case VarClass::u: slot = &s.u; break;
                case VarClass::w:
                    if (n->index < static_cast<int>(s.w.size())) slot = &s.w[n->index];
                    break;
            }
            if (slot && slot->has_value()) return **slot;
            return variable(n->var_class, n->index);
        }
        case Kind::neg: return -substitute_impl(n->a.get(), s);
        case Kind::sin: return sin(substitute_impl(n->a.get(), s));
        case Kind::cos: return cos(substitute_impl(n->a.get(), s));
        case Kind::exp: return exp(substitute_impl(n->a.get(), s));
        case Kind::add: return substitute_impl(n->a.get(), s) + substitute_impl(n->b.get(), s);
        case Kind::sub: return substitute_impl(n->a.get(), s) - substitute_impl(n->b.get(), s);
        case Kind::mul: return substitute_impl(n->a.get(), s) * substitute_impl(n->b.get(), s);
        case Kind::div: return substitute_impl(n->a.get(), s) / substitute_impl(n->b.get(), s);
        case Kind::pow: return pow(substitute_impl(n->a.get(), s), n->exponent);
    }
    return constant(0.0);
}

// ---------------------------------------------------------------------------
// Compiled evaluation: a group of expressions flattened into one shared
// tape. Substitution-built trees (output chains, running costs and their
// derivatives) repeat large subtrees both by node sharing and by
// structure; hashing on both collapses them so each distinct subexpression
// is computed once per evaluation point. The shooting optimizer lives on
// this path.
// ---------------------------------------------------------------------------

class CompiledExprs {
public:
    CompiledExprs() = default;

    explicit CompiledExprs(std::span<const Expr> exprs) {
        std::unordered_map<const Expr::Node*, int> by_node;
        std::unordered_map<std::string, int> by_shape;
        for (const auto& e : exprs) outputs_.push_back(flatten(e.node(), by_node, by_shape));
    }

    std::size_t outputs() const { return outputs_.size(); }
    std::size_t op_count() const { return ops_.size(); }

    void eval(std::span<const double> x, double u, std::span<const double> w,
              std::span<double> out) const {
        if (out.size() != outputs_.size())
            throw StructuralError("dsl: compiled eval output span size mismatch");
        thread_local std::vector<double> slots;
        slots.resize(ops_.size());
        for (std::size_t i = 0; i < ops_.size(); ++i) {
            const Op& op = ops_[i];
            double v = 0.0;
            switch (op.kind) {
                case Expr::Kind::constant: v = op.value; break;
                case Expr::Kind::variable:
                    switch (op.var_class) {
                        case VarClass::x:
                            if (op.index >= static_cast<int>(x.size()))
                                throw StructuralError("dsl: x vector too short for expression");
                            v = x[op.index];
                            break;
                        case VarClass::u: v = u; break;
                        case VarClass::w:
                            if (op.index >= static_cast<int>(w.size()))
                                throw StructuralError("dsl: w vector too short for expression");
                            v = w[op.index];
                            break;
                    }
                    break;
                case Expr::Kind::neg: v = -slots[op.a]; break;
                case Expr::Kind::sin: v = std::sin(slots[op.a]); break;
                case Expr::Kind::cos: v = std::cos(slots[op.a]); break;
                case Expr::Kind::exp: v = std::exp(slots[op.a]); break;
                case Expr::Kind::add: v = slots[op.a] + slots[op.b]; break;
                case Expr::Kind::sub: v = slots[op.a] - slots[op.b]; break;
                case Expr::Kind::mul: v = slots[op.a] * slots[op.b]; break;
                case Expr::Kind::div:
                    if (slots[op.b] == 0.0) throw EvalError("dsl: division by zero");
                    v = slots[op.a] / slots[op.b];
                    break;
                case Expr::Kind::pow: {
                    v = 1.0;
                    for (int e = 0; e < op.exponent; ++e) v *= slots[op.a];
                    break;
                }
            }
            slots[i] = v;
        }
        for (std::size_t i = 0; i < outputs_.size(); ++i) out[i] = slots[outputs_[i]];
    }

private:
    struct Op {
        Expr::Kind kind;
        int a = -1, b = -1;
        double value = 0.0;
        VarClass var_class{};
        int index = 0;
        int exponent = 0;
    };

    int flatten(const Expr::Node& n, std::unordered_map<const Expr::Node*, int>& by_node,
                std::unordered_map<std::string, int>& by_shape) {
        if (auto it = by_node.find(&n); it != by_node.end()) return it->second;
        Op op;
        op.kind = n.kind;
        std::string key;
        switch (n.kind) {
            case Expr::Kind::constant: {
                op.value = n.value;
                key = "c" + format_double(n.value);
                break;
            }
            case Expr::Kind::variable: {
                op.var_class = n.var_class;
                op.index = n.index;
                key = "v" + std::to_string(static_cast<int>(n.var_class)) + "." +
                      std::to_string(n.index);
                break;
            }
            case Expr::Kind::pow: {
                op.a = flatten(*n.a, by_node, by_shape);
                op.exponent = n.exponent;
                key = "p" + std::to_string(op.a) + "^" + std::to_string(n.exponent);
                break;
            }
            case Expr::Kind::neg:
            case Expr::Kind::sin:
            case Expr::Kind::cos:
            case Expr::Kind::exp: {
                op.a = flatten(*n.a, by_node, by_shape);
                key = "u" + std::to_string(static_cast<int>(n.kind)) + "." + std::to_string(op.a);
                break;
            }
            default: {
                op.a = flatten(*n.a, by_node, by_shape);
                op.b = flatten(*n.b, by_node, by_shape);
                key = "b" + std::to_string(static_cast<int>(n.kind)) + "." + std::to_string(op.a) +
                      "." + std::to_string(op.b);
                break;
            }
        }
        if (auto it = by_shape.find(key); it != by_shape.end()) {
            by_node.emplace(&n, it->second);
            return it->second;
        }
        const int slot = static_cast<int>(ops_.size());
        ops_.push_back(op);
        by_shape.emplace(std::move(key), slot);
        by_node.emplace(&n, slot);
        return slot;
    }

    std::vector<Op> ops_;
    std::vector<int> outputs_;
};

// ---------------------------------------------------------------------------
// Parser: formulas over x1..xn, u, w1..wk with + - * / ^, sin/cos/exp,
// parentheses, and standard precedence. '^' takes a non-negative integer
// literal exponent.
// ---------------------------------------------------------------------------

namespace detail {

class ExprParser {
public:
    ExprParser(std::string_view src, Dims dims) : src_(src), dims_(dims) {}

    Expr parse() {
        Expr e = parse_sum();
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("dsl: " + what + " at position " + std::to_string(pos_), pos_);
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < src_.size() ? src_[pos_] : '\0';
    }

    Expr parse_sum() {
        Expr e = parse_term();
        while (true) {
            if (consume('+'))
                e = e + parse_term();
            else if (consume('-'))
                e = e - parse_term();
            else
                return e;
        }
    }

    Expr parse_term() {
        Expr e = parse_factor();
        while (true) {
            if (consume('*'))
                e = e * parse_factor();
            else if (consume('/'))
                e = e / parse_factor();
            else
                return e;
        }
    }

    Expr parse_factor() {
        if (consume('-')) return -parse_factor();
        return parse_power();
    }

    Expr parse_power() {
        Expr base = parse_atom();
        if (consume('^')) {
            skip_ws();
            const std::size_t start = pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            if (pos_ == start) fail("expected a non-negative integer exponent after '^'");
            const int e = std::atoi(std::string(src_.substr(start, pos_ - start)).c_str());
            return Expr::pow(base, e);
        }
        return base;
    }

    Expr parse_atom() {
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end of input");
        const char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = parse_sum();
            if (!consume(')')) fail("expected ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
        fail(std::string("unexpected character '") + c + "'");
    }

    Expr parse_number() {
        // strtod needs a terminated buffer; the tail is short
        const std::string tail(src_.substr(pos_));
        char* end = nullptr;
        const double v = std::strtod(tail.c_str(), &end);
        if (end == tail.c_str()) fail("invalid number");
        pos_ += static_cast<std::size_t>(end - tail.c_str());
        return Expr::constant(v);
    }

    Expr parse_ident() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && std::isalpha(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        const std::string name(src_.substr(start, pos_ - start));
        if (name == "sin" || name == "cos" || name == "exp") {
            if (!consume('(')) fail("expected '(' after function name");
            Expr arg = parse_sum();
            if (!consume(')')) fail("expected ')'");
            if (name == "sin") return Expr::sin(arg);
            if (name == "cos") return Expr::cos(arg);
            return Expr::exp(arg);
        }
        if (name == "u") return Expr::variable(VarClass::u, 0);
        if (name == "x" || name == "w") {
            const std::size_t digit_start = pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            if (pos_ == digit_start) fail("expected an index after '" + name + "'");
            const int idx = std::atoi(std::string(src_.substr(digit_start, pos_ - digit_start)).c_str());
            const int limit = name == "x" ? dims_.n : dims_.k;
            if (idx < 1 || idx > limit)
                fail(name + std::to_string(idx) + " out of declared range (1.." +
                     std::to_string(limit) + ")");
            return Expr::variable(name == "x" ? VarClass::x : VarClass::w, idx - 1);
        }
        pos_ = start;
        fail("unknown identifier '" + name + "'");
    }

    std::string_view src_;
    Dims dims_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline Expr parse_expr(std::string_view src, Dims dims) {
    return detail::ExprParser(src, dims).parse();
}

// Jacobian of a list of expressions with respect to all variables of one
// class: entry (i, j) is d f_i / d var_j.
inline std::vector<std::vector<Expr>> expr_jacobian(std::span<const Expr> f, VarClass wrt,
                                                    int var_count) {
    std::vector<std::vector<Expr>> jac(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        jac[i].reserve(var_count);
        for (int j = 0; j < var_count; ++j) jac[i].push_back(f[i].derivative(wrt, j));
    }
    return jac;
}

// Third-degree Lie series discretization of an unforced field in x:
//   x+ = x + f ts + L_f(f) ts^2/2 + L_f^2(f) ts^3/6,  L_f(g) = (dg/dx) f.
// The control column G u is appended by the caller.
inline std::vector<Expr> lie_discretize(const std::vector<Expr>& f_ct, double t_s) {
    if (t_s <= 0.0) throw StructuralError("dsl: Lie discretization needs t_s > 0");
    for (const auto& e : f_ct) {
        if (e.depends_on(VarClass::u))
            throw StructuralError("dsl: Lie discretization expects the unforced field (no u)");
        if (e.depends_on(VarClass::w))
            throw StructuralError("dsl: Lie discretization expects a field in x only");
    }
    const int n = static_cast<int>(f_ct.size());
    auto lie = [&](const std::vector<Expr>& g) {
        std::vector<Expr> out;
        out.reserve(n);
        for (int i = 0; i < n; ++i) {
            Expr acc = Expr::constant(0.0);
            for (int j = 0; j < n; ++j) acc = acc + g[i].derivative(VarClass::x, j) * f_ct[j];
            out.push_back(acc);
        }
        return out;
    };
    const std::vector<Expr> g2 = lie(f_ct);
    const std::vector<Expr> g3 = lie(g2);
    std::vector<Expr> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        out.push_back(Expr::variable(VarClass::x, i) + f_ct[i] * Expr::constant(t_s) +
                      g2[i] * Expr::constant(t_s * t_s / 2.0) +
                      g3[i] * Expr::constant(t_s * t_s * t_s / 6.0));
    }
    return out;
}

} // namespace mprlab
