#!/usr/bin/env python3
"""External-solver adapter: <this script> <instance.mps> <solution.txt>

Parses the MPS file written by the `mpbs` toolchain (extended fixed format,
OBJSENSE section, INTORG/INTEND markers, explicit bounds) and solves it with
scipy's HiGHS-backed MILP. Writes one `name value` pair per line, which the
caller imports back.

Any solver reachable from Python could replace the scipy call; this file
doubles as the reference for the adapter contract.
"""

import sys

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp


def parse_mps(path):
    name = "MPS"
    maximize = False
    section = None
    obj_row = None
    rows = []  # (name, sense)
    row_idx = {}
    cols = []  # name in order
    col_idx = {}
    col_int = {}
    entries = []  # (row name or OBJ, col, value)
    rhs = {}
    bounds = {}
    in_int = False

    with open(path) as fh:
        for raw in fh:
            if not raw.strip() or raw.startswith("*"):
                continue
            header = not raw[0].isspace()
            tok = raw.split()
            if header:
                key = tok[0]
                if key == "NAME":
                    name = tok[1] if len(tok) > 1 else name
                elif key == "OBJSENSE":
                    section = "objsense"
                elif key in ("ROWS", "COLUMNS", "RHS", "BOUNDS"):
                    section = key
                elif key == "ENDATA":
                    break
                else:
                    raise ValueError(f"unknown section {key}")
                continue
            if section == "objsense":
                maximize = tok[0].upper().startswith("MAX")
            elif section == "ROWS":
                kind, rname = tok
                if kind == "N":
                    if obj_row is None:
                        obj_row = rname
                else:
                    row_idx[rname] = len(rows)
                    rows.append((rname, kind))
            elif section == "COLUMNS":
                if "MARKER" in raw:
                    if "INTORG" in raw:
                        in_int = True
                    elif "INTEND" in raw:
                        in_int = False
                    continue
                col = tok[0]
                if col not in col_idx:
                    col_idx[col] = len(cols)
                    cols.append(col)
                    col_int[col] = in_int
                for rname, val in zip(tok[1::2], tok[2::2]):
                    entries.append((rname, col, float(val)))
            elif section == "RHS":
                for rname, val in zip(tok[1::2], tok[2::2]):
                    rhs[rname] = float(val)
            elif section == "BOUNDS":
                btype, _, col = tok[0], tok[1], tok[2]
                val = float(tok[3]) if len(tok) > 3 else None
                lo, hi = bounds.get(col, (0.0, np.inf))
                if btype == "UP":
                    hi = val
                elif btype == "LO":
                    lo = val
                elif btype == "FX":
                    lo = hi = val
                elif btype == "BV":
                    lo, hi = 0.0, 1.0
                    col_int[col] = True
                elif btype == "MI":
                    lo = -np.inf
                elif btype == "PL":
                    hi = np.inf
                bounds[col] = (lo, hi)

    n = len(cols)
    m = len(rows)
    c = np.zeros(n)
    a = sparse.lil_matrix((m, n))
    for rname, col, val in entries:
        j = col_idx[col]
        if rname == obj_row:
            c[j] += val
        else:
            a[row_idx[rname], j] += val
    lower = np.full(m, -np.inf)
    upper = np.full(m, np.inf)
    for i, (rname, kind) in enumerate(rows):
        b = rhs.get(rname, 0.0)
        if kind == "L":
            upper[i] = b
        elif kind == "G":
            lower[i] = b
        else:
            lower[i] = upper[i] = b
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    for col, (l, h) in bounds.items():
        j = col_idx[col]
        lo[j], hi[j] = l, h
    integrality = np.array([1 if col_int[col] else 0 for col in cols])
    return name, maximize, c, a.tocsr(), lower, upper, lo, hi, integrality, cols


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    mps_path, sol_path = sys.argv[1], sys.argv[2]
    (_, maximize, c, a, row_lo, row_hi, lo, hi, integrality, cols) = parse_mps(mps_path)
    sign = -1.0 if maximize else 1.0
    res = milp(
        sign * c,
        constraints=LinearConstraint(a, row_lo, row_hi),
        bounds=Bounds(lo, hi),
        integrality=integrality,
        options={"mip_rel_gap": 1e-6, "presolve": True},
    )
    if not res.success or res.x is None:
        sys.exit(f"milp failed: {res.message}")
    x = res.x
    # Snap integers cleanly for the importer's tolerance check.
    x = np.where(integrality == 1, np.round(x), x)
    with open(sol_path, "w") as fh:
        fh.write(f"# objective {sign * res.fun}\n")
        for name, val in zip(cols, x):
            fh.write(f"{name} {float(val)}\n")


if __name__ == "__main__":
    main()
