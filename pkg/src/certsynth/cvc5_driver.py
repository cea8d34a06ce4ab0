"""Command-line front end running an SMT-LIB script through the cvc5 library.

Used as the CVC5 executable when no ``cvc5`` binary is installed.  Output
follows the solver's own format, except that ``(get-model)`` prints every
declared constant with a plain rational or decimal value (irrational
algebraic values are refined to 40 significant digits).

    python -m certsynth.cvc5_driver script.smt2
"""
from __future__ import annotations

import argparse
import sys
from fractions import Fraction

ALGEBRAIC_DIGITS = 40


def _term_value(t, var, at: Fraction) -> Fraction:
    """Evaluate a cvc5 polynomial term in ``var`` at a rational point."""
    from cvc5 import Kind

    k = t.getKind()
    if t == var:
        return at
    if k == Kind.CONST_RATIONAL:
        return Fraction(t.getRealValue())
    kids = [_term_value(c, var, at) for c in t]
    if k == Kind.ADD:
        return sum(kids, Fraction(0))
    if k == Kind.MULT:
        out = Fraction(1)
        for v in kids:
            out *= v
        return out
    if k == Kind.SUB:
        return kids[0] - sum(kids[1:], Fraction(0))
    if k == Kind.NEG:
        return -kids[0]
    if k == Kind.POW:
        return kids[0] ** int(kids[1])
    raise ValueError(f"unexpected term kind {k} in defining polynomial")


def _refine_root(poly, var, lo: Fraction, hi: Fraction) -> Fraction:
    flo = _term_value(poly, var, lo)
    fhi = _term_value(poly, var, hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        return (lo + hi) / 2
    width = Fraction(1, 10 ** (ALGEBRAIC_DIGITS + 5))
    scale = max(abs(lo), abs(hi), Fraction(1))
    while hi - lo > width * scale:
        mid = (lo + hi) / 2
        fm = _term_value(poly, var, mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return (lo + hi) / 2


def _decimal(q: Fraction, digits: int = ALGEBRAIC_DIGITS) -> str:
    from decimal import Decimal, localcontext

    with localcontext() as ctx:
        ctx.prec = digits
        d = Decimal(q.numerator) / Decimal(q.denominator)
        text = format(abs(d), "f")
    if "." not in text:
        text += ".0"
    return f"(- {text})" if d < 0 else text


def _rational(q: Fraction) -> str:
    if q.denominator == 1:
        text = f"{abs(q.numerator)}.0"
    else:
        text = f"(/ {abs(q.numerator)} {q.denominator})"
    return f"(- {text})" if q < 0 else text


def _value_text(solver, tm, term) -> str:
    v = solver.getValue(term)
    if v.isRealAlgebraicNumber():
        var = tm.mkVar(tm.getRealSort(), "_y")
        poly = v.getRealAlgebraicNumberDefiningPolynomial(var)
        lo = Fraction(v.getRealAlgebraicNumberLowerBound().getRealValue())
        hi = Fraction(v.getRealAlgebraicNumberUpperBound().getRealValue())
        return _decimal(_refine_root(poly, var, lo, hi))
    if v.isRealValue() or v.isIntegerValue():
        return _rational(Fraction(v.getRealValue()))
    return str(v)


def run(path: str, out=sys.stdout) -> int:
    import cvc5
    from cvc5 import InputLanguage, InputParser, SymbolManager

    solver = cvc5.Solver()
    solver.setOption("produce-models", "true")
    tm = solver.getTermManager()
    sm = SymbolManager(tm)
    parser = InputParser(solver, sm)
    parser.setFileInput(InputLanguage.SMT_LIB_2_6, path)
    last = ""
    while True:
        cmd = parser.nextCommand()
        if cmd.isNull():
            break
        name = cmd.getCommandName()
        if name == "get-model":
            if last != "sat":
                out.write('(error "cannot get model unless after a SAT response")\n')
                continue
            out.write("(\n")
            for t in sm.getDeclaredTerms():
                out.write(f"(define-fun {t} () Real {_value_text(solver, tm, t)})\n")
            out.write(")\n")
        elif name == "exit":
            break
        else:
            text = cmd.invoke(solver, sm)
            if name == "check-sat":
                last = text.strip()
            out.write(text)
        out.flush()
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="certsynth-cvc5", description=__doc__.splitlines()[0])
    ap.add_argument("script")
    args = ap.parse_args(argv)
    try:
        return run(args.script)
    except Exception as exc:  # parse or solver failure: report like a solver
        print(f'(error "{exc}")')
        return 1


if __name__ == "__main__":
    sys.exit(main())
