"""Export a ModelIR to CPLEX LP format for cross-checks with other solvers."""

from __future__ import annotations

import math
import re

from .ir import EQ, GE, LE, BINARY, ModelIR

_SENSE_TOKEN = {LE: "<=", GE: ">=", EQ: "="}


def _sanitize(name: str, used: set[str], fallback: str) -> str:
    clean = re.sub(r"[^A-Za-z0-9_.]", "_", name) or fallback
    if clean[0].isdigit() or clean[0] == ".":
        clean = "_" + clean
    base = clean
    k = 1
    while clean in used:
        clean = f"{base}_{k}"
        k += 1
    used.add(clean)
    return clean


def _terms_text(pairs, names) -> str:
    chunks = []
    for col, coef in pairs:
        sign = "-" if coef < 0 else "+"
        chunks.append(f"{sign} {abs(coef):.17g} {names[col]}")
    if not chunks:
        return "0 dummy_zero"
    text = " ".join(chunks)
    return text[2:] if text.startswith("+ ") else text


def write_lp(ir: ModelIR, path: str):
    """Write the model as a minimization LP file (binaries declared)."""
    used: set[str] = set()
    names = [
        _sanitize(v.name, used, f"x{j}") for j, v in enumerate(ir.variables)
    ]
    lines = [f"\\ {ir.name}", "Minimize", " obj:"]
    obj_pairs = sorted(ir.objective.items())
    lines.append("  " + _terms_text(obj_pairs, names))
    if ir.objective_offset:
        lines.append(f"  + {ir.objective_offset:.17g} obj_offset")
    lines.append("Subject To")
    row_used: set[str] = set()
    for i in range(ir.n_rows):
        rname = _sanitize(ir.row_names[i], row_used, f"c{i}")
        pairs = sorted(zip(ir._row_cols[i].tolist(), ir._row_vals[i].tolist()))
        lines.append(
            f" {rname}: {_terms_text(pairs, names)} "
            f"{_SENSE_TOKEN[ir.row_sense[i]]} {ir.row_rhs[i]:.17g}"
        )
    lines.append("Bounds")
    if ir.objective_offset:
        lines.append(" obj_offset = 1")
    for j, v in enumerate(ir.variables):
        if v.kind == BINARY:
            continue
        lo = "-inf" if math.isinf(v.lb) else f"{v.lb:.17g}"
        hi = "+inf" if math.isinf(v.ub) else f"{v.ub:.17g}"
        lines.append(f" {lo} <= {names[j]} <= {hi}")
    binaries = [names[j] for j in ir.binary_indices()]
    if binaries:
        lines.append("Binary")
        for chunk in range(0, len(binaries), 8):
            lines.append(" " + " ".join(binaries[chunk : chunk + 8]))
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
